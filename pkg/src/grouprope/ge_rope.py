"""Geometry-aware rotary encodings driven by a dense displacement field.

A displacement field assigns each target-grid cell an offset (dh, dw) that
says where its content "came from" on the reference grid. Instead of rotating
each token by the phase of its own grid coordinate, we rotate it by the phase
of the displaced coordinate, so tokens related by the field end up with
matching spatial signatures.

The raw field usually lives at image resolution. `prepare_field` brings it
onto the token grid in three steps, in this order: bilinear resize to the
token grid, division by the patch size (pixel offsets become token offsets),
and Gaussian smoothing with a fixed 21x21 kernel (sigma 11, edge replication).
Smoothing last keeps high-frequency resize artifacts out of the phases.

Warped coordinates are clamped to the grid and snapped to the nearest integer
with round-half-up ties before indexing the phase tables, so a zero field
reproduces the plain encoding bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rope_core import RopeDims, build_axis_tables

SMOOTH_SIZE = 21
SMOOTH_SIGMA = 11.0


@dataclass(frozen=True)
class DisplacementField:
    """Per-cell (dh, dw) offsets on some grid, stored as two [H, W] planes."""

    dh: np.ndarray
    dw: np.ndarray

    def __post_init__(self):
        if self.dh.ndim != 2 or self.dh.shape != self.dw.shape:
            raise ValueError(
                f"dh/dw must be matching 2D arrays, got {self.dh.shape} and {self.dw.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.dh.shape

    @staticmethod
    def zeros(h: int, w: int) -> "DisplacementField":
        return DisplacementField(np.zeros((h, w)), np.zeros((h, w)))


def resize_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample a 2D plane to (out_h, out_w).

    Uses the half-pixel (align-corners-false) convention: output cell centers
    map to src = (dst + 0.5) * scale - 0.5, clamped to the source extent.
    """
    if plane.ndim != 2:
        raise ValueError(f"expected a 2D plane, got shape {plane.shape}")
    in_h, in_w = plane.shape
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    if (in_h, in_w) == (out_h, out_w):
        return plane.astype(np.float64, copy=True)

    src_y = (np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5
    src_x = (np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5
    src_y = np.clip(src_y, 0.0, in_h - 1.0)
    src_x = np.clip(src_x, 0.0, in_w - 1.0)

    y0 = np.floor(src_y).astype(int)
    x0 = np.floor(src_x).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (src_y - y0)[:, None]
    fx = (src_x - x0)[None, :]

    p = plane.astype(np.float64)
    top = p[np.ix_(y0, x0)] * (1 - fx) + p[np.ix_(y0, x1)] * fx
    bot = p[np.ix_(y1, x0)] * (1 - fx) + p[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def gaussian_kernel(size: int = SMOOTH_SIZE, sigma: float = SMOOTH_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian taps; the 2D kernel is the outer product."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(
    plane: np.ndarray, size: int = SMOOTH_SIZE, sigma: float = SMOOTH_SIGMA
) -> np.ndarray:
    """Separable Gaussian blur with edge-replication padding."""
    if plane.ndim != 2:
        raise ValueError(f"expected a 2D plane, got shape {plane.shape}")
    k = gaussian_kernel(size, sigma)
    half = size // 2

    out = plane.astype(np.float64)
    padded = np.pad(out, ((half, half), (0, 0)), mode="edge")
    out = np.empty_like(plane, dtype=np.float64)
    for i in range(plane.shape[0]):
        out[i] = k @ padded[i : i + size]
    padded = np.pad(out, ((0, 0), (half, half)), mode="edge")
    res = np.empty_like(out)
    for j in range(plane.shape[1]):
        res[:, j] = padded[:, j : j + size] @ k
    return res


def prepare_field(
    field: DisplacementField,
    grid_h: int,
    grid_w: int,
    patch_h: float,
    patch_w: float,
) -> DisplacementField:
    """Resize to the token grid, rescale pixel offsets to token units, smooth."""
    if patch_h <= 0 or patch_w <= 0:
        raise ValueError("patch sizes must be positive")
    dh = resize_bilinear(field.dh, grid_h, grid_w) / patch_h
    dw = resize_bilinear(field.dw, grid_h, grid_w) / patch_w
    return DisplacementField(gaussian_smooth(dh), gaussian_smooth(dw))


def round_half_up(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer with .5 always going up (floor(x + 0.5))."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(int)


@dataclass(frozen=True)
class WarpedGrid:
    """Integer source coordinates per target cell, ready for table lookup."""

    h_idx: np.ndarray
    w_idx: np.ndarray


def warp_grid(field: DisplacementField, grid_h: int, grid_w: int) -> WarpedGrid:
    """Displace each cell by the field, clamp to the grid, snap to integers."""
    if field.shape != (grid_h, grid_w):
        raise ValueError(
            f"field shape {field.shape} does not match grid ({grid_h}, {grid_w})"
        )
    hh, ww = np.meshgrid(np.arange(grid_h), np.arange(grid_w), indexing="ij")
    h_warp = np.clip(hh + field.dh, 0.0, grid_h - 1.0)
    w_warp = np.clip(ww + field.dw, 0.0, grid_w - 1.0)
    return WarpedGrid(h_idx=round_half_up(h_warp), w_idx=round_half_up(w_warp))


def build_ge_rope(
    fields: list[DisplacementField | None],
    dims: RopeDims,
    n_h: int,
    n_w: int,
) -> np.ndarray:
    """Phase grid [T, H, W, d_total/2] with field-warped spatial coordinates.

    One optional field per image; None means that image keeps its plain grid
    coordinates. The temporal block is never warped. Fields must already be
    prepared (token-grid resolution, token units).
    """
    n_t = len(fields)
    if n_t == 0:
        raise ValueError("need at least one image slot")
    phi_t, phi_h, phi_w = build_axis_tables(dims, n_t, n_h, n_w)

    out = np.empty((n_t, n_h, n_w, dims.d_total // 2), dtype=np.complex128)
    hh, ww = np.meshgrid(np.arange(n_h), np.arange(n_w), indexing="ij")
    for t, field in enumerate(fields):
        if field is None:
            h_idx, w_idx = hh, ww
        else:
            warped = warp_grid(field, n_h, n_w)
            h_idx, w_idx = warped.h_idx, warped.w_idx
        out[t] = np.concatenate(
            [
                np.broadcast_to(phi_t[t], (n_h, n_w, dims.d_t // 2)),
                phi_h[h_idx],
                phi_w[w_idx],
            ],
            axis=-1,
        )
    return out
