"""Central-difference Richardson-extrapolation Hessian.

Serves as the high-accuracy benchmark for the observed information: the
objective is evaluated on a grid around the point, the grid shrinks by a
fixed factor between iterations, and the curvature estimates are combined
by standard two-point Richardson weights. The evaluation count is exactly
1 + r * (N**2 + N) for r iterations and N parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteEvaluation


@dataclass
class RichardsonConfig:
    initial_step: float = 1e-3
    iterations: int = 2
    step_reduction: float = 4.0

    def __post_init__(self):
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step_reduction <= 1:
            raise ValueError("step_reduction must exceed 1")


def richardson_hessian(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    config: RichardsonConfig | None = None,
    return_count: bool = False,
):
    """Symmetric Hessian estimate of f at theta; optionally the eval count."""
    config = config or RichardsonConfig()
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    count = 0

    def ev(point: np.ndarray) -> float:
        nonlocal count
        count += 1
        val = float(f(point))
        if not np.isfinite(val):
            raise NonFiniteEvaluation(f"objective non-finite at {point}")
        return val

    f0 = ev(theta)
    estimates = []
    h = config.initial_step
    for _ in range(config.iterations):
        hess = np.empty((n, n))
        fp = np.empty(n)
        fm = np.empty(n)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            fp[i] = ev(theta + e)
            fm[i] = ev(theta - e)
            hess[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h**2
        for i in range(n):
            for j in range(i + 1, n):
                e = np.zeros(n)
                e[i] = h
                e[j] = h
                fpp = ev(theta + e)
                fmm = ev(theta - e)
                hij = (fpp - fp[i] - fp[j] + 2.0 * f0 - fm[i] - fm[j] + fmm) / (
                    2.0 * h**2
                )
                hess[i, j] = hess[j, i] = hij
        estimates.append(hess)
        h /= config.step_reduction
    # central differences carry O(h^2) error: extrapolate pairwise
    c2 = config.step_reduction**2
    while len(estimates) > 1:
        estimates = [
            (c2 * b - a) / (c2 - 1.0) for a, b in zip(estimates[:-1], estimates[1:])
        ]
    out = estimates[0]
    out = (out + out.T) / 2.0
    if return_count:
        return out, count
    return out
