"""End-to-end group denoising: load, encode, position, integrate, decode, report.

The run directory ends up with one output PPM per frame, a JSON report, a
per-step CSV, and rendered figures. Every byte written is a deterministic
function of the manifest contents and the effective seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import (
    BackboneConfig,
    init_params,
    make_text_stub,
    predict_velocity,
)
from .formats import (
    GroupManifest,
    read_field,
    read_ppm,
    load_mask,
    to_uint8,
    to_unit_float,
    validate_manifest_files,
    write_ppm,
)
from .ge_rope import build_ge_rope, prepare_field
from .identity_rope import build_identity_rope, extract_rects
from .latents import add_noise, decode_latents, encode_latents, get_schedule
from .rope_core import flatten_grid
from .sampler import integrate
from .synthetic import Affine2D, synth_dense_tokens
from .viz import viz_phase_map, viz_velocity_norms, viz_warp

DENSE_GRID = (1, 4, 4)  # 16 auxiliary geometry tokens, fused in every block


@dataclass
class RunResult:
    out_dir: Path
    output_images: list[Path]
    report_path: Path
    metrics_path: Path
    figure_paths: list[Path]
    velocity_norms: list[float]
    final_latents: np.ndarray
    positions_kind: str


def load_group(manifest: GroupManifest) -> tuple[np.ndarray, np.ndarray]:
    """Images as floats [T, 3, H, W] and masks [T, H, W], both in [0, 1]."""
    validate_manifest_files(manifest)
    images = []
    for p in manifest.image_paths():
        img = to_unit_float(read_ppm(p))  # [H, W, 3]
        images.append(img.transpose(2, 0, 1))
    masks = [load_mask(p) for p in manifest.mask_paths()]
    shapes = {im.shape for im in images} | {(3,) + m.shape for m in masks}
    if len(shapes) != 1:
        raise ValueError(f"inconsistent image/mask shapes: {sorted(shapes)}")
    return np.stack(images), np.stack(masks)


def masks_to_token_grid(masks: np.ndarray, grid: tuple[int, int, int]) -> np.ndarray:
    """Area-average pixel masks [T, H, W] onto the (g_t, g_h, g_w) token grid."""
    g_t, g_h, g_w = grid
    t, h, w = masks.shape
    if t % g_t or h % g_h or w % g_w:
        raise ValueError(f"mask dims {(t, h, w)} not tileable to grid {grid}")
    m = masks.reshape(g_t, t // g_t, g_h, h // g_h, g_w, w // g_w)
    return m.mean(axis=(1, 3, 5))


def build_group_positions(
    manifest: GroupManifest,
    masks: np.ndarray,
    grid: tuple[int, int, int],
    image_hw: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray, str]:
    """Positional phase grid for the latent tokens.

    Uses the warped encoding when the manifest carries a displacement field,
    otherwise the rectangle-remapped one; exactly one of the two.
    Returns (grid encoding [g_t, g_h, g_w, d/2], flat rows [S, d/2], kind).
    """
    g_t, g_h, g_w = grid
    dims = manifest.dims()
    field_path = manifest.field_path()
    if field_path is not None:
        raw = read_field(field_path)
        prepared = prepare_field(
            raw, g_h, g_w, patch_h=image_hw[0] / g_h, patch_w=image_hw[1] / g_w
        )
        enc = build_ge_rope([prepared] * g_t, dims, g_h, g_w)
        kind = "warped"
    else:
        token_masks = masks_to_token_grid(masks, grid)
        enc = build_identity_rope(token_masks, dims)
        kind = "rectangle"
    return enc, flatten_grid(enc), kind


def run_group(
    manifest: GroupManifest, out_dir: Path | str, seed_override: int | None = None
) -> RunResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = manifest.seed if seed_override is None else seed_override
    dims = manifest.dims()
    patch = manifest.patch()
    schedule = get_schedule(manifest.schedule)

    images, masks = load_group(manifest)
    t, _, img_h, img_w = images.shape
    z = encode_latents(images, r=manifest.r, c_out=manifest.channels)
    grid = patch.token_grid(t, z.shape[2], z.shape[3])
    enc, positions, pos_kind = build_group_positions(
        manifest, masks, grid, (img_h, img_w)
    )

    config = BackboneConfig(dims=dims)
    params = init_params(config, patch.token_dim(manifest.channels), seed=seed)
    text = make_text_stub(
        "\n".join(manifest.captions), seed, config.text_len, config.d_text
    )
    dense = synth_dense_tokens(
        seed + 1, Affine2D.identity(), *DENSE_GRID, config.d_model, dims
    )

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(z.shape)
    x_init = add_noise(z, 1.0, eps, schedule)

    if manifest.zero_velocity:
        velocity_fn = lambda x, tau: np.zeros_like(x)
    else:
        velocity_fn = lambda x, tau: predict_velocity(
            x, tau, params, positions, text, patch, dense
        )

    norms: list[float] = []
    taus: list[float] = []

    def record(i, tau, v):
        norms.append(float(np.linalg.norm(v)))
        taus.append(tau)

    final = integrate(x_init, manifest.n_steps, velocity_fn, on_step=record)
    decoded = decode_latents(final, r=manifest.r)

    output_images = []
    for i in range(t):
        p = out_dir / f"frame_{i:03d}.ppm"
        write_ppm(p, to_uint8(decoded[i].transpose(1, 2, 0)))
        output_images.append(p)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w") as f:
        f.write("step,tau,velocity_norm\n")
        for i, (tau, n) in enumerate(zip(taus, norms)):
            f.write(f"{i},{tau!r},{n!r}\n")

    figure_paths = [out_dir / "velocity_norms.png"]
    viz_velocity_norms(norms, figure_paths[0])
    phase_path = out_dir / "positions_h0.ppm"
    viz_phase_map(enc, dims, "h", 0, phase_path)
    figure_paths.append(phase_path)
    if manifest.field_path() is not None:
        quiver = out_dir / "warp_field.png"
        viz_warp(
            prepare_field(
                read_field(manifest.field_path()),
                grid[1],
                grid[2],
                patch_h=img_h / grid[1],
                patch_w=img_w / grid[2],
            ),
            quiver,
            title="prepared displacement field (token cells)",
        )
        figure_paths.append(quiver)

    report = {
        "group": manifest.group,
        "seed": seed,
        "schedule": manifest.schedule,
        "n_steps": manifest.n_steps,
        "positions": pos_kind,
        "token_grid": list(grid),
        "n_tokens": int(np.prod(grid)),
        "latent_shape": list(z.shape),
        "velocity_norms": norms,
        "final_latent_min": float(final.min()),
        "final_latent_max": float(final.max()),
        "all_finite": bool(np.all(np.isfinite(final))),
        "outputs": [p.name for p in output_images],
        "figures": [p.name for p in figure_paths],
        "rectangles": [
            {
                "present": r.present,
                "x1": r.x1,
                "y1": r.y1,
                "x2": r.x2,
                "y2": r.y2,
            }
            for r in extract_rects(masks)
        ],
    }
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    return RunResult(
        out_dir=out_dir,
        output_images=output_images,
        report_path=report_path,
        metrics_path=metrics_path,
        figure_paths=figure_paths,
        velocity_norms=norms,
        final_latents=final,
        positions_kind=pos_kind,
    )
