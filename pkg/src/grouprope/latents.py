"""Latent-space plumbing: fixed encoder, noise schedules, patchification.

The "latent map" here is deliberately dumb: space-to-depth by an integer
factor r followed by zero-padding the channel axis up to C. It is linear,
exactly invertible, and stands in for a learned VAE so the rest of the
pipeline can be tested bit-for-bit.

Latents are channels-first: [T, C, H', W'] with H' = H/r, W' = W/r.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def encode_latents(images: np.ndarray, r: int, c_out: int) -> np.ndarray:
    """Space-to-depth by r, then zero-pad channels to c_out.

    images: [T, c_in, H, W] with r | H and r | W. The block layout follows
    the pixel-shuffle convention: source channel c at in-block offset
    (dy, dx) lands on output channel c*r*r + dy*r + dx.
    """
    if images.ndim != 4:
        raise ValueError(f"expected [T, C, H, W], got shape {images.shape}")
    t, c_in, h, w = images.shape
    if r < 1:
        raise ValueError(f"reduction factor must be >= 1, got {r}")
    if h % r or w % r:
        raise ValueError(f"spatial dims {(h, w)} not divisible by r={r}")
    c_mid = c_in * r * r
    if c_out < c_mid:
        raise ValueError(f"c_out={c_out} too small for {c_in} channels at r={r}")

    x = images.reshape(t, c_in, h // r, r, w // r, r)
    x = x.transpose(0, 1, 3, 5, 2, 4).reshape(t, c_mid, h // r, w // r)
    if c_out == c_mid:
        return np.ascontiguousarray(x)
    pad = np.zeros((t, c_out - c_mid, h // r, w // r), dtype=x.dtype)
    return np.concatenate([x, pad], axis=1)


def decode_latents(latents: np.ndarray, r: int, c_in: int = 3) -> np.ndarray:
    """Exact left inverse of encode_latents: drop padding, depth-to-space."""
    if latents.ndim != 4:
        raise ValueError(f"expected [T, C, H', W'], got shape {latents.shape}")
    t, c, hp, wp = latents.shape
    c_mid = c_in * r * r
    if c < c_mid:
        raise ValueError(f"latent has {c} channels, need at least {c_mid}")
    x = latents[:, :c_mid].reshape(t, c_in, r, r, hp, wp)
    x = x.transpose(0, 1, 4, 2, 5, 3).reshape(t, c_in, hp * r, wp * r)
    return np.ascontiguousarray(x)


@dataclass(frozen=True)
class NoiseSchedule:
    """Interpolation weights between the clean latent (tau=0) and noise (tau=1)."""

    name: str
    alpha: Callable[[float], float]
    sigma: Callable[[float], float]


def _cosine_alpha(tau: float) -> float:
    # sin(pi*(1-tau)/2) == cos(pi*tau/2) but hits 0 exactly at tau=1
    return float(np.sin(0.5 * np.pi * (1.0 - tau)))


def _cosine_sigma(tau: float) -> float:
    return float(np.sin(0.5 * np.pi * tau))


SCHEDULES: dict[str, NoiseSchedule] = {
    "linear": NoiseSchedule("linear", lambda tau: 1.0 - tau, lambda tau: float(tau)),
    "cosine": NoiseSchedule("cosine", _cosine_alpha, _cosine_sigma),
}


def get_schedule(name: str) -> NoiseSchedule:
    try:
        return SCHEDULES[name]
    except KeyError:
        raise ValueError(f"unknown schedule {name!r}, have {sorted(SCHEDULES)}") from None


def add_noise(
    z: np.ndarray, tau: float, eps: np.ndarray, schedule: NoiseSchedule
) -> np.ndarray:
    """x(tau) = alpha(tau) * z + sigma(tau) * eps, elementwise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if z.shape != eps.shape:
        raise ValueError(f"shape mismatch: z {z.shape} vs eps {eps.shape}")
    a, s = schedule.alpha(tau), schedule.sigma(tau)
    # keep the endpoints literal so tau=0 returns z itself and tau=1 eps itself
    if s == 0.0:
        return a * z if a != 1.0 else z.copy()
    if a == 0.0:
        return s * eps if s != 1.0 else eps.copy()
    return a * z + s * eps


@dataclass(frozen=True)
class PatchSpec:
    """Non-overlapping (p_t, p_h, p_w) blocks over a [T, C, H', W'] latent."""

    p_t: int = 1
    p_h: int = 2
    p_w: int = 2

    def __post_init__(self):
        for name in ("p_t", "p_h", "p_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    def check_divides(self, t: int, h: int, w: int) -> None:
        if t % self.p_t or h % self.p_h or w % self.p_w:
            raise ValueError(
                f"latent dims {(t, h, w)} not divisible by patch {self.as_tuple()}"
            )

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.p_t, self.p_h, self.p_w)

    def n_tokens(self, t: int, h: int, w: int) -> int:
        self.check_divides(t, h, w)
        return (t // self.p_t) * (h // self.p_h) * (w // self.p_w)

    def token_dim(self, c: int) -> int:
        return c * self.p_t * self.p_h * self.p_w

    def token_grid(self, t: int, h: int, w: int) -> tuple[int, int, int]:
        self.check_divides(t, h, w)
        return (t // self.p_t, h // self.p_h, w // self.p_w)


def patchify(x: np.ndarray, spec: PatchSpec) -> np.ndarray:
    """[T, C, H', W'] -> [S, C*p_t*p_h*p_w], blocks in row-major (t, h, w) order."""
    if x.ndim != 4:
        raise ValueError(f"expected [T, C, H', W'], got shape {x.shape}")
    t, c, h, w = x.shape
    spec.check_divides(t, h, w)
    nt, nh, nw = t // spec.p_t, h // spec.p_h, w // spec.p_w
    y = x.reshape(nt, spec.p_t, c, nh, spec.p_h, nw, spec.p_w)
    y = y.transpose(0, 3, 5, 2, 1, 4, 6)
    return np.ascontiguousarray(y.reshape(nt * nh * nw, spec.token_dim(c)))


def unpatchify(
    tokens: np.ndarray, spec: PatchSpec, shape: tuple[int, int, int, int]
) -> np.ndarray:
    """Exact inverse of patchify back to the given [T, C, H', W'] shape."""
    t, c, h, w = shape
    spec.check_divides(t, h, w)
    nt, nh, nw = t // spec.p_t, h // spec.p_h, w // spec.p_w
    if tokens.shape != (nt * nh * nw, spec.token_dim(c)):
        raise ValueError(
            f"token array {tokens.shape} does not match shape {shape} with {spec}"
        )
    y = tokens.reshape(nt, nh, nw, c, spec.p_t, spec.p_h, spec.p_w)
    y = y.transpose(0, 4, 3, 1, 5, 2, 6)
    return np.ascontiguousarray(y.reshape(t, c, h, w))
