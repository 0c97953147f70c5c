"""Named runtime checks over the library's invariants.

Each check measures a residual and compares it against an explicit tolerance,
so a failure reports how far off the value was. `run_all` powers the CLI
`check` command; the numbered checks double as the acceptance properties.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .backbone import (
    BackboneConfig,
    attention_forward,
    block_forward,
    init_params,
    make_text_stub,
    predict_velocity,
    velocity_input_vjp,
)
from .formats import (
    GroupManifest,
    parse_manifest,
    read_field,
    read_pgm,
    read_ppm,
    write_field,
    write_manifest,
    write_pgm,
    write_ppm,
)
from .ge_rope import (
    DisplacementField,
    build_ge_rope,
    gaussian_kernel,
    gaussian_smooth,
    warp_grid,
)
from .identity_rope import build_identity_rope
from .latents import (
    SCHEDULES,
    PatchSpec,
    decode_latents,
    encode_latents,
    patchify,
    unpatchify,
)
from .rope_core import (
    RopeDims,
    apply_rotary,
    axis_slice,
    build_axis_tables,
    build_frequency_vector,
    build_grid_phases,
    build_phase_table,
    flatten_grid,
)
from .sampler import integrate
from .synthetic import Affine2D, empty_dense_grid, synth_dense_tokens

DIMS = RopeDims()  # theta 10000, (8, 12, 12)


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    seconds: float
    criterion: int | None = None
    budget_s: float | None = None
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tag = f" [criterion {self.criterion}]" if self.criterion else ""
        extra = f" -- {self.detail}" if self.detail and not self.passed else ""
        return (
            f"{status} {self.name}{tag}: residual {self.residual:.3e} "
            f"(tol {self.tolerance:.0e}, {self.seconds:.2f}s){extra}"
        )


_REGISTRY: list[tuple[str, int | None, float | None, Callable[[], tuple[float, float, str]]]] = []


def _register(name: str, criterion: int | None = None, budget_s: float | None = None):
    def deco(fn):
        _REGISTRY.append((name, criterion, budget_s, fn))
        return fn

    return deco


def run_check(name: str) -> CheckResult:
    for reg_name, criterion, budget, fn in _REGISTRY:
        if reg_name == name:
            start = time.perf_counter()
            residual, tol, detail = fn()
            seconds = time.perf_counter() - start
            passed = residual <= tol and (budget is None or seconds < budget)
            if budget is not None and seconds >= budget:
                detail = f"{detail + '; ' if detail else ''}over {budget}s budget"
            return CheckResult(
                name, passed, residual, tol, seconds, criterion, budget, detail
            )
    raise KeyError(f"no check named {name!r}")


def run_all() -> list[CheckResult]:
    return [run_check(name) for name, _, _, _ in _REGISTRY]


def check_names() -> list[str]:
    return [name for name, _, _, _ in _REGISTRY]


# -- numbered acceptance properties ------------------------------------------


@_register("rope_relative_position", criterion=1, budget_s=1.0)
def _rope_relative_position():
    """Rotary dot products depend only on the position difference."""
    rng = np.random.default_rng(101)
    worst = 0.0
    for axis in ("t", "h", "w"):
        d = DIMS.d_axis(axis)
        table = build_phase_table(build_frequency_vector(DIMS.theta, d), 64)
        n = 1000
        q = rng.standard_normal((n, d))
        k = rng.standard_normal((n, d))
        p1 = rng.integers(0, 32, n)
        p2 = rng.integers(0, 32, n)
        s = rng.integers(0, 32, n)
        base = np.sum(apply_rotary(q, table[p1]) * apply_rotary(k, table[p2]), axis=1)
        shifted = np.sum(
            apply_rotary(q, table[p1 + s]) * apply_rotary(k, table[p2 + s]), axis=1
        )
        worst = max(worst, float(np.max(np.abs(base - shifted))))
    return worst, 1e-9, "1000 random cases per axis"


@_register("identity_signature_sharing", criterion=2, budget_s=1.0)
def _identity_signature_sharing():
    """Equal rectangle-relative offsets give bitwise-equal spatial phases and
    cross-image logits that move only with the temporal axis."""
    rng = np.random.default_rng(202)
    spatial = slice(axis_slice(DIMS, "h").start, None)
    worst = 0.0
    bitwise_failures = 0
    for _ in range(100):
        g = int(rng.integers(8, 13))
        rh = int(rng.integers(2, 5))
        rw = int(rng.integers(2, 5))
        masks = np.zeros((2, g, g))
        offs = []
        for t in range(2):
            y = int(rng.integers(0, g - rh + 1))
            x = int(rng.integers(0, g - rw + 1))
            masks[t, y : y + rh, x : x + rw] = 1.0
            offs.append((y, x))
        enc = build_identity_rope(masks, DIMS)
        (y0, x0), (y1, x1) = offs
        inside0 = enc[0, y0 : y0 + rh, x0 : x0 + rw, spatial]
        inside1 = enc[1, y1 : y1 + rh, x1 : x1 + rw, spatial]
        if not np.array_equal(inside0, inside1):
            bitwise_failures += 1
            continue
        q = rng.standard_normal(DIMS.d_total)
        k = rng.standard_normal(DIMS.d_total)
        logits = [
            float(
                apply_rotary(q, enc[0, y0 + a, x0 + b])
                @ apply_rotary(k, enc[1, y1 + a, x1 + b])
            )
            for a in range(rh)
            for b in range(rw)
        ]
        worst = max(worst, max(logits) - min(logits))
    if bitwise_failures:
        return float("inf"), 1e-9, f"{bitwise_failures} configs not bitwise equal"
    return worst, 1e-9, "100 random two-image configurations"


@_register("ge_degeneracy_translation", criterion=3)
def _ge_degeneracy_translation():
    """Zero field reproduces the plain grid bitwise; clamp-free integer
    shifts move the table indices by exactly that amount."""
    n_h = n_w = 8
    zero = [DisplacementField.zeros(n_h, n_w) for _ in range(2)]
    enc = build_ge_rope(zero, DIMS, n_h, n_w)
    if not np.array_equal(enc, build_grid_phases(DIMS, 2, n_h, n_w)):
        return float("inf"), 0.0, "zero-field encoding differs from baseline"

    shift_h, shift_w = 2, 1
    field = DisplacementField(
        np.full((n_h, n_w), float(shift_h)), np.full((n_h, n_w), float(shift_w))
    )
    warped = warp_grid(field, n_h, n_w)
    hh, ww = np.meshgrid(np.arange(n_h), np.arange(n_w), indexing="ij")
    interior = (hh + shift_h <= n_h - 1) & (ww + shift_w <= n_w - 1)
    mismatches = int(
        np.sum(warped.h_idx[interior] != (hh + shift_h)[interior])
        + np.sum(warped.w_idx[interior] != (ww + shift_w)[interior])
    )

    enc_s = build_ge_rope([field], DIMS, n_h, n_w)
    _, phi_h, phi_w = build_axis_tables(DIMS, 1, n_h, n_w)
    sl_h, sl_w = axis_slice(DIMS, "h"), axis_slice(DIMS, "w")
    for h in range(n_h - shift_h):
        for w in range(n_w - shift_w):
            if not np.array_equal(enc_s[0, h, w, sl_h], phi_h[h + shift_h]):
                mismatches += 1
            if not np.array_equal(enc_s[0, h, w, sl_w], phi_w[w + shift_w]):
                mismatches += 1
    return float(mismatches), 0.0, "zero field bitwise; +(2,1) shift index-exact"


@_register("smoothing_kernel", criterion=4)
def _smoothing_kernel():
    k1 = gaussian_kernel()
    kernel_err = abs(float(np.outer(k1, k1).sum()) - 1.0)
    if kernel_err > 1e-12:
        return kernel_err, 1e-12, "2D kernel mass"

    const = gaussian_smooth(np.full((16, 16), 2.5))
    const_err = float(np.max(np.abs(const - 2.5)))

    rng = np.random.default_rng(404)
    x, y = rng.standard_normal((2, 12, 12))
    a, b = 1.7, -0.6
    lin_err = float(
        np.max(
            np.abs(
                gaussian_smooth(a * x + b * y)
                - (a * gaussian_smooth(x) + b * gaussian_smooth(y))
            )
        )
    )
    # kernel mass holds at 1e-12; constancy and linearity at 1e-10
    return max(const_err, lin_err), 1e-10, f"kernel mass residual {kernel_err:.1e}"


@_register("fusion_contract", criterion=5)
def _fusion_contract():
    rng = np.random.default_rng(505)
    cfg = BackboneConfig(dims=DIMS)
    params = init_params(cfg, token_dim=16, seed=3)
    blk = params.blocks[0]
    text = make_text_stub("check", 0, cfg.text_len, cfg.d_text)
    x = rng.standard_normal((8, cfg.d_model))
    pos = flatten_grid(build_grid_phases(DIMS, 2, 2, 2))

    def run(dense):
        out, _ = block_forward(x, pos, text, dense, None, blk, cfg.n_heads)
        return out

    grids = {
        0: empty_dense_grid(cfg.d_model, DIMS),
        1: synth_dense_tokens(7, Affine2D.identity(), 1, 1, 1, cfg.d_model, DIMS),
        16: synth_dense_tokens(7, Affine2D.identity(), 1, 4, 4, cfg.d_model, DIMS),
    }
    for n, dense in grids.items():
        if run(dense).shape != x.shape:
            return float("inf"), 1e-9, f"length broken for {n} dense tokens"

    dense = grids[16]
    perm = rng.permutation(16)
    from .synthetic import DenseTokenGrid

    permuted = DenseTokenGrid(
        tokens=dense.flat_tokens()[perm].reshape(dense.tokens.shape),
        positions=dense.flat_positions()[perm].reshape(dense.positions.shape),
        displacement=dense.displacement,
    )
    perm_err = float(np.max(np.abs(run(permuted) - run(dense))))
    if perm_err > 1e-9:
        return perm_err, 1e-9, "permutation invariance"

    q = rng.standard_normal((1, 2, 4))
    k = rng.standard_normal((1, 2, 4))
    v = rng.standard_normal((1, 2, 4))
    scale = 1.0 / math.sqrt(4)
    out, _ = attention_forward(q, k, v, scale)
    closed_err = 0.0
    for i in range(2):
        z0 = float(q[0, i] @ k[0, 0]) * scale
        z1 = float(q[0, i] @ k[0, 1]) * scale
        p1 = 1.0 / (1.0 + math.exp(z0 - z1))
        expect = (1.0 - p1) * v[0, 0] + p1 * v[0, 1]
        closed_err = max(closed_err, float(np.max(np.abs(out[0, i] - expect))))
    if closed_err > 1e-12:
        return closed_err, 1e-12, "2-token closed form"
    return max(perm_err, closed_err), 1e-9, "sizes 0/1/16, permutation, closed form"


@_register("gradient_check", criterion=6, budget_s=30.0)
def _gradient_check():
    """Analytic input gradient vs central differences on a toy velocity net."""
    spec = PatchSpec(1, 2, 2)
    rng = np.random.default_rng(606)
    x = rng.standard_normal((2, 4, 4, 4))
    positions = flatten_grid(build_grid_phases(DIMS, *spec.token_grid(2, 4, 4)))
    cfg = BackboneConfig(dims=DIMS)
    params = init_params(cfg, spec.token_dim(4), seed=8, d_dense=24)
    text = make_text_stub("grad", 1, cfg.text_len, cfg.d_text)
    dense = synth_dense_tokens(9, Affine2D.identity(), 1, 2, 2, 24, DIMS)
    probe = rng.standard_normal(x.shape)
    tau = 0.4

    _, grad = velocity_input_vjp(x, tau, params, positions, text, spec, probe, dense)

    def loss(xq):
        return float(
            np.sum(predict_velocity(xq, tau, params, positions, text, spec, dense) * probe)
        )

    h = 1e-4
    flat = x.ravel()
    coords = rng.choice(flat.size, size=60, replace=False)
    worst = 0.0
    for idx in coords:
        xp, xm = flat.copy(), flat.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (loss(xp.reshape(x.shape)) - loss(xm.reshape(x.shape))) / (2 * h)
        an = grad.ravel()[idx]
        worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-4))
    return worst, 1e-5, "60 random coordinates, h=1e-4"


@_register("sampler_order", criterion=7)
def _sampler_order():
    rng = np.random.default_rng(707)
    z = rng.standard_normal((2, 3, 4, 4))
    eps = rng.standard_normal((2, 3, 4, 4))
    one_step = integrate(eps, 1, lambda x, tau: eps - z)
    const_err = float(np.max(np.abs(one_step - z)))
    if const_err > 1e-12:
        return const_err, 1e-12, "constant flow not exact after one step"

    a, b = 0.8, 1.6
    x1 = np.array([2.0])
    exact = x1 - a - b / 2

    def err(n):
        return abs(float(integrate(x1, n, lambda x, tau: np.array([a + b * tau]))[0] - exact[0]))

    ratio = err(10) / err(100)
    # a 10x error shrink within a factor of 2: max(r/10, 10/r) <= 2
    factor = max(ratio / 10.0, 10.0 / ratio)
    if factor > 2.0:
        return factor, 2.0, f"error ratio {ratio:.2f} not ~10x"
    return const_err, 1e-12, f"error ratio {ratio:.2f}"


@_register("round_trips", criterion=8)
def _round_trips():
    rng = np.random.default_rng(808)
    images = rng.standard_normal((2, 3, 8, 8))
    back = decode_latents(encode_latents(images, r=2, c_out=16), r=2)
    if not np.array_equal(back, images):
        return float(np.max(np.abs(back - images))), 0.0, "encode/decode"

    x = rng.standard_normal((2, 4, 6, 6))
    spec = PatchSpec(1, 2, 3)
    if not np.array_equal(unpatchify(patchify(x, spec), spec, x.shape), x):
        return float("inf"), 0.0, "patchify/unpatchify"

    with tempfile.TemporaryDirectory() as td:
        td = Path(td)
        gray = rng.integers(0, 256, size=(9, 7), dtype=np.uint8)
        write_pgm(td / "m.pgm", gray)
        if not np.array_equal(read_pgm(td / "m.pgm"), gray):
            return float("inf"), 0.0, "PGM bytes"
        color = rng.integers(0, 256, size=(5, 6, 3), dtype=np.uint8)
        write_ppm(td / "i.ppm", color)
        if not np.array_equal(read_ppm(td / "i.ppm"), color):
            return float("inf"), 0.0, "PPM bytes"
        field = DisplacementField(rng.standard_normal((4, 5)), rng.standard_normal((4, 5)))
        write_field(td / "f.gedf", field)
        got = read_field(td / "f.gedf")
        if not (np.array_equal(got.dh, field.dh) and np.array_equal(got.dw, field.dw)):
            return float("inf"), 0.0, "field bytes"
        manifest = GroupManifest(
            group="rt",
            images=("a.ppm", "b.ppm"),
            masks=("a.pgm", "b.pgm"),
            captions=("one", "two"),
            field="f.gedf",
            seed=5,
        )
        write_manifest(td / "g.manifest", manifest)
        if parse_manifest(td / "g.manifest") != manifest:
            return float("inf"), 0.0, "manifest fields"
    return 0.0, 0.0, "encode/decode, patchify, PGM, PPM, field, manifest"


# -- further module invariants ------------------------------------------------


@_register("frequency_bank_shape")
def _frequency_bank_shape():
    """Banks start at exactly 1 and strictly decrease."""
    for d in (2, 8, 12, 32):
        f = build_frequency_vector(10000.0, d)
        if f[0] != 1.0 or np.any(np.diff(f) >= 0):
            return float("inf"), 0.0, f"bank broken for d={d}"
    return 0.0, 0.0, ""


@_register("phase_unit_modulus")
def _phase_unit_modulus():
    enc = build_grid_phases(DIMS, 3, 5, 5)
    res = float(np.max(np.abs(np.abs(enc) - 1.0)))
    if not np.all(enc[0, 0, 0] == 1.0 + 0.0j):
        return float("inf"), 1e-12, "origin row is not exactly 1"
    return res, 1e-12, ""


@_register("rotation_norm_preserved")
def _rotation_norm_preserved():
    rng = np.random.default_rng(33)
    q = rng.standard_normal((200, DIMS.d_total))
    phases = flatten_grid(build_grid_phases(DIMS, 2, 10, 10))[:200]
    res = float(
        np.max(
            np.abs(
                np.linalg.norm(apply_rotary(q, phases), axis=1)
                - np.linalg.norm(q, axis=1)
            )
        )
    )
    return res, 1e-10, ""


@_register("schedule_endpoints")
def _schedule_endpoints():
    for name, sched in sorted(SCHEDULES.items()):
        ends = (sched.alpha(0.0), sched.sigma(0.0), sched.alpha(1.0), sched.sigma(1.0))
        if ends != (1.0, 0.0, 0.0, 1.0):
            return float("inf"), 0.0, f"{name} endpoints {ends}"
        taus = np.linspace(0, 1, 17)
        al = [sched.alpha(t) for t in taus]
        si = [sched.sigma(t) for t in taus]
        if any(a < b for a, b in zip(al, al[1:])) or any(
            a > b for a, b in zip(si, si[1:])
        ):
            return float("inf"), 0.0, f"{name} not monotone"
    return 0.0, 0.0, ""


@_register("empty_mask_fallback")
def _empty_mask_fallback():
    enc = build_identity_rope(np.zeros((2, 6, 7)), DIMS)
    equal = np.array_equal(enc, build_grid_phases(DIMS, 2, 6, 7))
    return (0.0 if equal else float("inf")), 0.0, "all-empty masks use the plain grid"


@_register("dense_positions_shared_banks")
def _dense_positions_shared_banks():
    grid = synth_dense_tokens(4, Affine2D.identity(), 2, 3, 3, 16, DIMS)
    equal = np.array_equal(grid.positions, build_grid_phases(DIMS, 2, 3, 3))
    return (0.0 if equal else float("inf")), 0.0, ""


@_register("velocity_determinism")
def _velocity_determinism():
    spec = PatchSpec(1, 2, 2)
    rng = np.random.default_rng(44)
    x = rng.standard_normal((2, 4, 4, 4))
    positions = flatten_grid(build_grid_phases(DIMS, *spec.token_grid(2, 4, 4)))
    cfg = BackboneConfig(dims=DIMS)
    params_a = init_params(cfg, spec.token_dim(4), seed=12)
    params_b = init_params(cfg, spec.token_dim(4), seed=12)
    text = make_text_stub("same", 2, cfg.text_len, cfg.d_text)
    va = predict_velocity(x, 0.3, params_a, positions, text, spec)
    vb = predict_velocity(x, 0.3, params_b, positions, text, spec)
    equal = np.array_equal(va, vb) and np.all(np.isfinite(va))
    return (0.0 if equal else float("inf")), 0.0, "same seed, bit-identical forward"


@_register("text_stub_determinism")
def _text_stub_determinism():
    a = make_text_stub("caption", 3, 4, 8)
    b = make_text_stub("caption", 3, 4, 8)
    c = make_text_stub("other caption", 3, 4, 8)
    ok = np.array_equal(a, b) and not np.array_equal(a, c)
    return (0.0 if ok else float("inf")), 0.0, ""
