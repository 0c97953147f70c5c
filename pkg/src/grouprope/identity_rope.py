"""Identity-preserving positional encoding via rectangle-relative coordinates.

Each image's object mask yields the smallest bounding rectangle of entries
above threshold.  Pixels inside the rectangle take coordinates relative to
its origin, so corresponding object regions in different images share the
same spatial phase rows regardless of where the object sits; pixels outside
keep their absolute coordinates.  The temporal axis is never remapped.

A known consequence, left as designed: a remapped interior coordinate can
coincide with an untouched exterior coordinate (interior origin (0, 0) vs
the image's own pixel (0, 0)), giving unrelated tokens identical spatial
signatures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rope_core import RopeDims, build_axis_tables


@dataclass(frozen=True)
class BoundingRect:
    """Inclusive pixel rectangle; x runs along width, y along height.

    present is False when no mask entry exceeded the threshold, in which
    case the coordinates are meaningless and remapping is the identity.
    """

    x1: int = 0
    y1: int = 0
    x2: int = 0
    y2: int = 0
    present: bool = False

    def contains(self, h: int, w: int) -> bool:
        return (
            self.present
            and self.x1 <= w <= self.x2
            and self.y1 <= h <= self.y2
        )


def extract_rect(mask: np.ndarray, threshold: float = 0.5) -> BoundingRect:
    """Smallest rectangle covering mask entries strictly above threshold."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {mask.shape}")
    rows, cols = np.nonzero(mask > threshold)
    if rows.size == 0:
        return BoundingRect(present=False)
    return BoundingRect(
        x1=int(cols.min()),
        y1=int(rows.min()),
        x2=int(cols.max()),
        y2=int(rows.max()),
        present=True,
    )


def remap_coords(h: int, w: int, rect: BoundingRect) -> tuple[int, int]:
    """Rectangle-relative coordinates inside the rectangle, identity outside."""
    if rect.contains(h, w):
        return h - rect.y1, w - rect.x1
    return h, w


def build_identity_rope(
    masks: np.ndarray,
    dims: RopeDims,
    n_t: int | None = None,
    n_h: int | None = None,
    n_w: int | None = None,
    threshold: float = 0.5,
) -> np.ndarray:
    """Assemble the identity-aligned encoding from per-image object masks.

    masks is [T, H, W] with values in [0, 1].  Returns a complex grid of
    shape [T, H, W, d_total/2]; flatten_grid gives the row-major token rows.
    With all-empty masks the result equals the plain 3D grid encoding.
    """
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim != 3:
        raise ValueError(f"masks must be [T, H, W], got shape {masks.shape}")
    t_sz, h_sz, w_sz = masks.shape
    for name, given, actual in (("T", n_t, t_sz), ("H", n_h, h_sz), ("W", n_w, w_sz)):
        if given is not None and given != actual:
            raise ValueError(f"{name} mismatch: masks have {actual}, expected {given}")

    phi_t, phi_h, phi_w = build_axis_tables(dims, t_sz, h_sz, w_sz)
    hh, ww = np.meshgrid(np.arange(h_sz), np.arange(w_sz), indexing="ij")

    full = np.empty((t_sz, h_sz, w_sz, dims.d_total // 2), dtype=np.complex128)
    half_t, half_h = dims.d_t // 2, dims.d_h // 2
    for t in range(t_sz):
        rect = extract_rect(masks[t], threshold=threshold)
        if rect.present:
            inside = (
                (rect.x1 <= ww) & (ww <= rect.x2) & (rect.y1 <= hh) & (hh <= rect.y2)
            )
            h_idx = np.where(inside, hh - rect.y1, hh)
            w_idx = np.where(inside, ww - rect.x1, ww)
        else:
            h_idx, w_idx = hh, ww
        full[t, ..., :half_t] = phi_t[t]
        full[t, ..., half_t : half_t + half_h] = phi_h[h_idx]
        full[t, ..., half_t + half_h :] = phi_w[w_idx]
    return full


def extract_rects(masks: np.ndarray, threshold: float = 0.5) -> list[BoundingRect]:
    """Per-image rectangles for a [T, H, W] mask stack."""
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim != 3:
        raise ValueError(f"masks must be [T, H, W], got shape {masks.shape}")
    return [extract_rect(m, threshold=threshold) for m in masks]
