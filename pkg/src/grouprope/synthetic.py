"""Synthetic stand-ins for the heavy upstream models.

Dense geometry tokens normally come from a pretrained reconstruction model;
here they are seeded Gaussian features on a small (F, H_g, W_g) grid paired
with the exact displacement field of a known parametric transform. Because
the field is analytic, warped-encoding behavior can be tested against ground
truth instead of against another model.

Also provides tiny rendered image groups (a bright rectangle moving over a
dark background) used by the bundled demo and the end-to-end tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ge_rope import DisplacementField
from .rope_core import RopeDims, build_grid_phases


@dataclass(frozen=True)
class Affine2D:
    """Map (h, w) -> A @ (h, w) + b in grid coordinates."""

    a: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    b: tuple[float, float] = (0.0, 0.0)

    @staticmethod
    def identity() -> "Affine2D":
        return Affine2D()

    @staticmethod
    def translation(dh: float, dw: float) -> "Affine2D":
        return Affine2D(b=(float(dh), float(dw)))

    def apply(self, h: float, w: float) -> tuple[float, float]:
        (a00, a01), (a10, a11) = self.a
        return (a00 * h + a01 * w + self.b[0], a10 * h + a11 * w + self.b[1])


def displacement_from_transform(
    transform: Affine2D, n_h: int, n_w: int
) -> DisplacementField:
    """Evaluate (transform(h, w) - (h, w)) on every cell of an (n_h, n_w) grid."""
    hh, ww = np.meshgrid(
        np.arange(n_h, dtype=np.float64), np.arange(n_w, dtype=np.float64), indexing="ij"
    )
    (a00, a01), (a10, a11) = transform.a
    dh = a00 * hh + a01 * ww + transform.b[0] - hh
    dw = a10 * hh + a11 * ww + transform.b[1] - ww
    return DisplacementField(dh, dw)


@dataclass(frozen=True)
class DenseTokenGrid:
    """Auxiliary geometry tokens with their own positions and ground-truth field."""

    tokens: np.ndarray  # [F, H_g, W_g, d_token]
    positions: np.ndarray  # [F, H_g, W_g, d_total/2] complex phase rows
    displacement: DisplacementField

    def __post_init__(self):
        if self.tokens.ndim != 4 or self.positions.ndim != 4:
            raise ValueError("tokens and positions must be 4D grids")
        if self.tokens.shape[:3] != self.positions.shape[:3]:
            raise ValueError(
                f"grid mismatch: tokens {self.tokens.shape[:3]} vs "
                f"positions {self.positions.shape[:3]}"
            )

    @property
    def n_tokens(self) -> int:
        f, h, w = self.tokens.shape[:3]
        return f * h * w

    def flat_tokens(self) -> np.ndarray:
        return self.tokens.reshape(self.n_tokens, self.tokens.shape[-1])

    def flat_positions(self) -> np.ndarray:
        return self.positions.reshape(self.n_tokens, self.positions.shape[-1])


def synth_dense_tokens(
    seed: int,
    transform: Affine2D,
    f: int,
    h_g: int,
    w_g: int,
    d_token: int,
    dims: RopeDims | None = None,
) -> DenseTokenGrid:
    """Seeded Gaussian tokens plus the analytic field of the given transform.

    Positions come from the same frequency banks the latent tokens use, so a
    fused sequence shares one phase vocabulary.
    """
    if min(f, h_g, w_g, d_token) < 1:
        raise ValueError(f"all dims must be >= 1, got {(f, h_g, w_g, d_token)}")
    dims = dims or RopeDims()
    rng = np.random.default_rng(seed)
    tokens = rng.standard_normal((f, h_g, w_g, d_token))
    positions = build_grid_phases(dims, f, h_g, w_g)
    field = displacement_from_transform(transform, h_g, w_g)
    return DenseTokenGrid(tokens=tokens, positions=positions, displacement=field)


def empty_dense_grid(d_token: int, dims: RopeDims | None = None) -> DenseTokenGrid:
    """Zero-token grid; fusing it must be a no-op."""
    dims = dims or RopeDims()
    return DenseTokenGrid(
        tokens=np.zeros((0, 1, 1, d_token)),
        positions=np.zeros((0, 1, 1, dims.d_total // 2), dtype=np.complex128),
        displacement=DisplacementField.zeros(1, 1),
    )


def synth_group_images(
    seed: int,
    n_frames: int,
    height: int,
    width: int,
    rect_h: int = 8,
    rect_w: int = 8,
) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
    """A bright rectangle drifting over a textured background.

    Returns float images [T, 3, H, W] in [0, 1], binary masks [T, H, W]
    marking the rectangle, and the per-frame top-left (y, x) offsets. The
    rectangle moves one cell right and one down per frame, wrapping early
    enough to stay fully inside the image.
    """
    if n_frames < 1 or height < rect_h or width < rect_w:
        raise ValueError("frame count and image size must fit the rectangle")
    rng = np.random.default_rng(seed)
    base = rng.uniform(0.05, 0.35, size=(3, height, width))
    color = rng.uniform(0.7, 1.0, size=3)

    images = np.empty((n_frames, 3, height, width))
    masks = np.zeros((n_frames, height, width))
    offsets = []
    for t in range(n_frames):
        y = (2 + t) % (height - rect_h)
        x = (3 + t) % (width - rect_w)
        frame = base.copy()
        frame[:, y : y + rect_h, x : x + rect_w] = color[:, None, None]
        images[t] = frame
        masks[t, y : y + rect_h, x : x + rect_w] = 1.0
        offsets.append((y, x))
    return images, masks, offsets
