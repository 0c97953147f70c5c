"""Rendering: phase-angle hue maps as exact PPMs, report figures via matplotlib.

Phase maps avoid any plotting library so their bytes are a pure function of
the encoding; the report figures (velocity-norm curve, warp quiver) use the
Agg backend, which is deterministic for fixed inputs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .formats import write_ppm
from .ge_rope import DisplacementField
from .rope_core import AXES, RopeDims, axis_slice


def hsv_to_rgb(h: np.ndarray, s: float = 1.0, v: float = 1.0) -> np.ndarray:
    """Vectorized HSV -> RGB in [0, 1]; hue wraps at 1."""
    h = np.asarray(h, dtype=np.float64) % 1.0
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = np.full_like(f, v * (1.0 - s))
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    vv = np.full_like(f, v)
    r = np.choose(i, [vv, q, p, p, t, vv])
    g = np.choose(i, [t, vv, vv, q, p, p])
    b = np.choose(i, [p, p, t, vv, vv, q])
    return np.stack([r, g, b], axis=-1)


def phase_to_rgb(phases: np.ndarray) -> np.ndarray:
    """Complex phases -> uint8 colors; angle in (-pi, pi] maps linearly to hue."""
    hue = (np.angle(phases) + np.pi) / (2.0 * np.pi)
    rgb = hsv_to_rgb(hue)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def render_phase_map(
    enc: np.ndarray, dims: RopeDims, axis: str, freq_index: int
) -> np.ndarray:
    """[T, H, W, d/2] encoding -> one [H, T*W, 3] montage for one frequency."""
    if enc.ndim != 4:
        raise ValueError(f"expected [T, H, W, d/2] encoding, got ndim={enc.ndim}")
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    sl = axis_slice(dims, axis)
    if not 0 <= freq_index < sl.stop - sl.start:
        raise ValueError(
            f"freq_index {freq_index} out of range for axis {axis!r} "
            f"({sl.stop - sl.start} frequencies)"
        )
    col = enc[..., sl.start + freq_index]  # [T, H, W]
    panels = [phase_to_rgb(col[t]) for t in range(col.shape[0])]
    return np.concatenate(panels, axis=1)


def viz_phase_map(
    enc: np.ndarray, dims: RopeDims, axis: str, freq_index: int, out_path: Path | str
) -> None:
    write_ppm(out_path, render_phase_map(enc, dims, axis, freq_index))


def viz_warp(field: DisplacementField, out_path: Path | str, title: str = "") -> None:
    """Quiver plot of a displacement field (row axis points down)."""
    h, w = field.shape
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
    ax.quiver(ww, hh, field.dw, field.dh, angles="xy", scale_units="xy", scale=1.0)
    ax.set_xlim(-1, w)
    ax.set_ylim(h, -1)
    ax.set_aspect("equal")
    ax.set_xlabel("w")
    ax.set_ylabel("h")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def viz_velocity_norms(norms: list[float], out_path: Path | str) -> None:
    """Per-step velocity magnitude over the denoising trajectory."""
    fig, ax = plt.subplots(figsize=(6, 3.5), dpi=100)
    ax.plot(range(len(norms)), norms, marker="o")
    ax.set_xlabel("step")
    ax.set_ylabel("||v||")
    ax.set_title("velocity norm per integration step")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
