"""Explicit Euler integration of a velocity field from noise to data.

The trajectory runs tau = 1 -> 0 in uniform steps: x <- x - (1/n) * v(x, tau).
First-order accurate; exact in one step when the velocity is constant, which
is the rectified-flow straight-line case.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

StepCallback = Callable[[int, float, np.ndarray], None]


def integrate(
    x_init: np.ndarray,
    n_steps: int,
    velocity_fn: Callable[[np.ndarray, float], np.ndarray],
    on_step: StepCallback | None = None,
) -> np.ndarray:
    """Run the Euler loop; on_step(i, tau, v) observes each velocity evaluation."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    x = np.array(x_init, dtype=np.float64, copy=True)
    dt = 1.0 / n_steps
    for i in range(n_steps):
        tau = 1.0 - i * dt
        v = velocity_fn(x, tau)
        if v.shape != x.shape:
            raise ValueError(f"velocity shape {v.shape} != state shape {x.shape}")
        x -= dt * v
        if on_step is not None:
            on_step(i, tau, v)
    return x
