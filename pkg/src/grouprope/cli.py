"""Command-line surface.

Commands:
  run <manifest>      full pipeline -> frames, report.json, metrics.csv, figures
  check               run every named invariant check, nonzero exit on failure
  viz                 phase-map montage or warp-field quiver from a manifest
  rope-id <manifest>  rectangle-remapped encoding only (ignores any field)
  rope-ge <manifest>  field-warped encoding only (requires a field)

GROUPROPE_SEED overrides the manifest seed when set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from .formats import parse_manifest, read_field, validate_manifest_files, write_ppm
from .ge_rope import build_ge_rope, prepare_field
from .identity_rope import build_identity_rope, extract_rects
from .pipeline import build_group_positions, load_group, masks_to_token_grid, run_group
from .viz import render_phase_map, viz_warp


def _env_seed() -> int | None:
    raw = os.environ.get("GROUPROPE_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"GROUPROPE_SEED must be an integer, got {raw!r}") from None


def _upscale(img: np.ndarray, scale: int) -> np.ndarray:
    if scale <= 1:
        return img
    return np.kron(img, np.ones((scale, scale, 1), dtype=img.dtype))


def _token_grid(manifest, images):
    t = images.shape[0]
    h_lat, w_lat = images.shape[2] // manifest.r, images.shape[3] // manifest.r
    return manifest.patch().token_grid(t, h_lat, w_lat)


def cmd_run(args) -> int:
    manifest = parse_manifest(args.manifest)
    out_dir = Path(args.out) if args.out else Path.cwd() / f"out_{manifest.group}"
    result = run_group(manifest, out_dir, seed_override=_env_seed())
    print(f"group {manifest.group}: {len(result.output_images)} frames -> {result.out_dir}")
    print(f"positions: {result.positions_kind}")
    print(f"report: {result.report_path}")
    print(f"metrics: {result.metrics_path}")
    for p in result.figure_paths:
        print(f"figure: {p}")
    return 0


def cmd_check(args) -> int:
    results = checks.run_all()
    for res in results:
        print(res.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def _phase_ppm(manifest, enc, args, default_name: str) -> int:
    img = render_phase_map(enc, manifest.dims(), args.axis, args.freq)
    out = Path(args.out) if args.out else Path(default_name)
    write_ppm(out, _upscale(img, args.scale))
    print(f"phase map ({args.axis}, freq {args.freq}) -> {out}")
    return 0


def cmd_viz(args) -> int:
    manifest = parse_manifest(args.manifest)
    validate_manifest_files(manifest)
    images, masks = load_group(manifest)
    grid = _token_grid(manifest, images)
    if args.kind == "phase":
        enc, _, kind = build_group_positions(
            manifest, masks, grid, images.shape[2:]
        )
        print(f"positions: {kind}")
        return _phase_ppm(manifest, enc, args, f"{manifest.group}_phase.ppm")
    # warp
    field_path = manifest.field_path()
    if field_path is None:
        print("error: manifest has no displacement field to draw", file=sys.stderr)
        return 2
    prepared = prepare_field(
        read_field(field_path),
        grid[1],
        grid[2],
        patch_h=images.shape[2] / grid[1],
        patch_w=images.shape[3] / grid[2],
    )
    out = Path(args.out) if args.out else Path(f"{manifest.group}_warp.png")
    viz_warp(prepared, out, title="prepared displacement field (token cells)")
    print(f"warp quiver -> {out}")
    return 0


def cmd_rope_id(args) -> int:
    manifest = parse_manifest(args.manifest)
    validate_manifest_files(manifest)
    images, masks = load_group(manifest)
    grid = _token_grid(manifest, images)
    token_masks = masks_to_token_grid(masks, grid)
    enc = build_identity_rope(token_masks, manifest.dims())
    for t, rect in enumerate(extract_rects(token_masks)):
        if rect.present:
            print(
                f"frame {t}: rect x1={rect.x1} y1={rect.y1} x2={rect.x2} y2={rect.y2}"
                f" on {grid[1]}x{grid[2]} token grid"
            )
        else:
            print(f"frame {t}: no rectangle (plain grid coordinates)")
    return _phase_ppm(manifest, enc, args, f"{manifest.group}_rope_id.ppm")


def cmd_rope_ge(args) -> int:
    manifest = parse_manifest(args.manifest)
    validate_manifest_files(manifest)
    field_path = manifest.field_path()
    if field_path is None:
        print("error: manifest has no displacement field", file=sys.stderr)
        return 2
    images, _ = load_group(manifest)
    grid = _token_grid(manifest, images)
    prepared = prepare_field(
        read_field(field_path),
        grid[1],
        grid[2],
        patch_h=images.shape[2] / grid[1],
        patch_w=images.shape[3] / grid[2],
    )
    enc = build_ge_rope([prepared] * grid[0], manifest.dims(), grid[1], grid[2])
    print(
        f"field on {grid[1]}x{grid[2]} token grid: "
        f"|dh| max {np.abs(prepared.dh).max():.3f}, "
        f"|dw| max {np.abs(prepared.dw).max():.3f} cells"
    )
    return _phase_ppm(manifest, enc, args, f"{manifest.group}_rope_ge.ppm")


def _add_phase_args(p) -> None:
    p.add_argument("--axis", choices=("t", "h", "w"), default="h")
    p.add_argument("--freq", type=int, default=0, help="frequency index within the axis")
    p.add_argument("--scale", type=int, default=1, help="integer upscale for viewing")
    p.add_argument("--out", help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grouprope",
        description="group-consistent rotary encodings and a toy denoising pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the pipeline on a group manifest")
    p_run.add_argument("manifest")
    p_run.add_argument("--out", help="output directory")
    p_run.set_defaults(fn=cmd_run)

    p_check = sub.add_parser("check", help="run the invariant suite")
    p_check.set_defaults(fn=cmd_check)

    p_viz = sub.add_parser("viz", help="render phase maps or warp fields")
    p_viz.add_argument("--kind", choices=("phase", "warp"), required=True)
    p_viz.add_argument("--manifest", required=True)
    _add_phase_args(p_viz)
    p_viz.set_defaults(fn=cmd_viz)

    p_id = sub.add_parser("rope-id", help="rectangle-remapped encoding for a manifest")
    p_id.add_argument("manifest")
    _add_phase_args(p_id)
    p_id.set_defaults(fn=cmd_rope_id)

    p_ge = sub.add_parser("rope-ge", help="field-warped encoding for a manifest")
    p_ge.add_argument("manifest")
    _add_phase_args(p_ge)
    p_ge.set_defaults(fn=cmd_rope_ge)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
