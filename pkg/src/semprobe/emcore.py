"""Generic fixed-point EM engine.

The engine sees a model only through the EMModel protocol: a pure
single-cycle map, the observed-data log-likelihood, and the complete-data
information matrix at a point. It records the full trajectory and the
log-likelihood history because the history-based rate-matrix estimators
consume both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import NonFiniteLL, ZeroDenominator
from .params import ParamVector


@dataclass
class EMConfig:
    rel_ll_tolerance: float = 1e-11
    max_iterations: int = 750
    mstep_rel_tolerance: float = 1e-12

    def __post_init__(self):
        if self.rel_ll_tolerance <= 0 or self.mstep_rel_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


# ground-truth fits use a looser relative tolerance than SEM runs
GROUND_TRUTH_REL_TOL = 1e-9
SEM_REL_TOL = 1e-11


@runtime_checkable
class EMModel(Protocol):
    """Behavioral contract consumed by the engine and the SEM estimators."""

    def cycle(self, theta: np.ndarray) -> np.ndarray:
        """One E-step + M-step; pure with respect to engine-visible state."""
        ...

    def observed_ll(self, theta: np.ndarray) -> float:
        """Observed-data log-likelihood (plus prior density when present)."""
        ...

    def complete_info(self, theta: np.ndarray) -> np.ndarray:
        """Negative expected complete-data Hessian at theta."""
        ...

    def param_meta(self) -> ParamVector:
        ...


@dataclass
class EMRun:
    trajectory: list[np.ndarray]
    ll_history: list[float]
    converged: bool
    iterations: int
    theta_hat: np.ndarray
    abs_ll_changes: list[float] = field(default_factory=list)

    def offsets(self, theta_hat: np.ndarray | None = None) -> np.ndarray:
        """Per-iteration parameter offsets from the final estimate."""
        ref = self.theta_hat if theta_hat is None else theta_hat
        return np.vstack(self.trajectory) - ref


def rel_ll_change(ll_prev: float, ll_cur: float) -> float:
    """Relative change of the log-likelihood between two iterations."""
    if ll_prev == 0:
        raise ZeroDenominator("use absolute change when the reference is 0")
    return abs((ll_prev - ll_cur) / ll_prev)


def run_em(model: EMModel, theta0: np.ndarray, config: EMConfig | None = None) -> EMRun:
    """Iterate the EM map from theta0 until the relative-change test passes.

    Non-convergence is a reported state (converged=False), not an exception;
    a non-finite log-likelihood aborts with a diagnostic.
    """
    config = config or EMConfig()
    theta = np.asarray(theta0, dtype=float).copy()
    ll = model.observed_ll(theta)
    if not np.isfinite(ll):
        raise NonFiniteLL(f"non-finite log-likelihood at start theta={theta}")
    trajectory = [theta.copy()]
    ll_history = [ll]
    abs_changes: list[float] = []
    converged = False
    iterations = 0
    for _ in range(config.max_iterations):
        theta = model.cycle(theta)
        iterations += 1
        ll_new = model.observed_ll(theta)
        if not np.isfinite(ll_new):
            raise NonFiniteLL(
                f"non-finite log-likelihood at iteration {iterations}, theta={theta}"
            )
        trajectory.append(theta.copy())
        abs_changes.append(abs(ll_history[-1] - ll_new))
        try:
            change = rel_ll_change(ll_history[-1], ll_new)
        except ZeroDenominator:
            change = abs(ll_new - ll_history[-1])
        ll_history.append(ll_new)
        if change < config.rel_ll_tolerance:
            converged = True
            break
    return EMRun(
        trajectory=trajectory,
        ll_history=ll_history,
        converged=converged,
        iterations=iterations,
        theta_hat=theta.copy(),
        abs_ll_changes=abs_changes,
    )


def additive_precision_limit(r: float) -> float:
    """Largest lambda >= 0 with fl(|r| + lambda) == |r| in double precision.

    Diagnostic used to justify relative (rather than absolute) convergence
    tolerances: the answer scales with |r|.
    """
    if not np.isfinite(r) or r == 0:
        raise ValueError("r must be finite and nonzero")
    a = abs(float(r))
    lo, hi = 0.0, float(np.spacing(a))
    for _ in range(200):
        mid = (lo + hi) / 2
        if a + mid == a:
            lo = mid
        else:
            hi = mid
    lam = lo
    while a + np.nextafter(lam, np.inf) == a:
        lam = np.nextafter(lam, np.inf)
    return lam
