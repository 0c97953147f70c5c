"""Multi-axis rotary positional encoding: frequency banks, phase tables, rotation.

Positions along each of the three axes (t = frame, h = row, w = column) get
their own frequency bank and precomputed complex phase table.  A token's
encoding is the concatenation of its per-axis phase rows, and queries/keys
are rotated by element-wise complex multiplication with that encoding.

Pairing convention (module-wide): a real vector of even length d is read as
d/2 complex numbers by pairing consecutive elements, (2j, 2j+1) -> (re, im).
All phase tables are complex128 and built eagerly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

AXES = ("t", "h", "w")


@dataclass(frozen=True)
class RopeDims:
    """Base frequency and per-axis embedding dimensions.

    Each axis dimension must be even and >= 2; theta must exceed 1 so the
    frequency bank is strictly decreasing.
    """

    theta: float = 10000.0
    d_t: int = 8
    d_h: int = 12
    d_w: int = 12

    def __post_init__(self):
        if not self.theta > 1.0:
            raise ValueError(f"theta must be > 1, got {self.theta}")
        for axis in AXES:
            d = self.d_axis(axis)
            if d < 2 or d % 2 != 0:
                raise ValueError(f"d_{axis} must be even and >= 2, got {d}")

    def d_axis(self, axis: str) -> int:
        if axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
        return {"t": self.d_t, "h": self.d_h, "w": self.d_w}[axis]

    @property
    def d_total(self) -> int:
        return self.d_t + self.d_h + self.d_w


def build_frequency_vector(theta: float, d_axis: int) -> np.ndarray:
    """Frequency bank for one axis: element i is theta**(-2i/d_axis).

    Returns a strictly decreasing float64 vector of length d_axis // 2 whose
    first element is exactly 1.
    """
    if d_axis < 2 or d_axis % 2 != 0:
        raise ValueError(f"d_axis must be even and >= 2, got {d_axis}")
    if not theta > 1.0:
        raise ValueError(f"theta must be > 1, got {theta}")
    i = np.arange(d_axis // 2, dtype=np.float64)
    return np.asarray(theta, dtype=np.float64) ** (-2.0 * i / d_axis)


def build_phase_table(freqs: np.ndarray, s_axis: int) -> np.ndarray:
    """Phase table over positions [0, s_axis): entry (p, i) = exp(i * p * freqs[i]).

    Row 0 is exactly 1+0j and every entry has unit modulus.
    """
    if s_axis < 1:
        raise ValueError(f"s_axis must be >= 1, got {s_axis}")
    freqs = np.asarray(freqs, dtype=np.float64)
    positions = np.arange(s_axis, dtype=np.float64)
    return np.exp(1j * np.outer(positions, freqs))


def build_axis_tables(
    dims: RopeDims, n_t: int, n_h: int, n_w: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Phase tables for all three axes over position ranges (n_t, n_h, n_w)."""
    sizes = {"t": n_t, "h": n_h, "w": n_w}
    return tuple(
        build_phase_table(build_frequency_vector(dims.theta, dims.d_axis(axis)), sizes[axis])
        for axis in AXES
    )


def to_complex_pairs(vec: np.ndarray) -> np.ndarray:
    """Reinterpret [..., d] real as [..., d/2] complex, (2j, 2j+1) -> (re, im)."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape[-1] % 2 != 0:
        raise ValueError(f"last dimension must be even, got {vec.shape[-1]}")
    return vec[..., 0::2] + 1j * vec[..., 1::2]


def from_complex_pairs(c: np.ndarray) -> np.ndarray:
    """Inverse of to_complex_pairs: interleave real and imaginary parts."""
    c = np.asarray(c, dtype=np.complex128)
    out = np.empty(c.shape[:-1] + (2 * c.shape[-1],), dtype=np.float64)
    out[..., 0::2] = c.real
    out[..., 1::2] = c.imag
    return out


def apply_rotary(vec: np.ndarray, phases: np.ndarray) -> np.ndarray:
    """Rotate the complex pairs of a real vector by unit-modulus phases.

    vec has shape [..., d], phases broadcasts against [..., d/2].  The result
    is Re-interleaved back to a real vector; the rotation preserves the
    Euclidean norm of each vector.
    """
    vec = np.asarray(vec, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.complex128)
    if vec.shape[-1] != 2 * phases.shape[-1]:
        raise ValueError(
            f"length mismatch: vector dim {vec.shape[-1]} needs {vec.shape[-1] // 2} "
            f"phases, got {phases.shape[-1]}"
        )
    return from_complex_pairs(to_complex_pairs(vec) * phases)


def concat_axis_phases(
    phi_t: np.ndarray, phi_h: np.ndarray, phi_w: np.ndarray
) -> np.ndarray:
    """Concatenate per-token axis phases in fixed (t, h, w) order."""
    return np.concatenate(
        [np.asarray(phi_t), np.asarray(phi_h), np.asarray(phi_w)], axis=-1
    )


def build_grid_phases(dims: RopeDims, n_t: int, n_h: int, n_w: int) -> np.ndarray:
    """Plain 3D encoding over a (n_t, n_h, n_w) grid.

    Returns a complex array of shape [n_t, n_h, n_w, d_total/2]; the (h, w)
    components are position-indexed directly with no remapping or warping.
    """
    phi_t, phi_h, phi_w = build_axis_tables(dims, n_t, n_h, n_w)
    full = np.empty((n_t, n_h, n_w, dims.d_total // 2), dtype=np.complex128)
    full[..., : dims.d_t // 2] = phi_t[:, None, None, :]
    full[..., dims.d_t // 2 : (dims.d_t + dims.d_h) // 2] = phi_h[None, :, None, :]
    full[..., (dims.d_t + dims.d_h) // 2 :] = phi_w[None, None, :, :]
    return full


def flatten_grid(phases: np.ndarray) -> np.ndarray:
    """Reshape a [n_t, n_h, n_w, d/2] grid to [(n_t*n_h*n_w), d/2] rows, row-major."""
    if phases.ndim != 4:
        raise ValueError(f"expected a 4D phase grid, got ndim={phases.ndim}")
    return phases.reshape(-1, phases.shape[-1])


def axis_slice(dims: RopeDims, axis: str) -> slice:
    """Column range of one axis inside a concatenated [.., d_total/2] encoding."""
    half = {a: dims.d_axis(a) // 2 for a in AXES}
    starts = {"t": 0, "h": half["t"], "w": half["t"] + half["h"]}
    return slice(starts[axis], starts[axis] + half[axis])
