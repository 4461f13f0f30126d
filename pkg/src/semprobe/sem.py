"""Rate-matrix estimation by probing the EM map, and information assembly.

Three column-selection strategies share one probe primitive:

* full-history with a per-element stability test ("mr"),
* a near-convergence history window selected on the log-likelihood
  trajectory ("tian"),
* a three-probe scheme that measures local finite-difference noise, fits
  the noise model nu(u) = beta / u**2, and solves the probe offset for a
  target noise intensity ("agile").

Each probe records the response of the whole parameter vector to a
perturbation of one coordinate, so column j of R is the j-th column of
the EM-map Jacobian in the column-vector convention.  In that convention
the observed information is (I - R.T) @ Ic, and the covariance is its
inverse, with the asymmetry of the raw product quantified before
symmetrization.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .emcore import EMModel, EMRun
from .errors import BoundViolation, DegenerateFit, EmptyWindow, SemProbeError
from .metrics import is_positive_definite, kl_divergence, mre, rd_norm

METHODS = ("mr", "tian", "agile")


@dataclass
class SemConfig:
    method: str = "agile"
    sem_tolerance: float = 1e-3  # sqrt of the nominal absolute EM tolerance 1e-6
    agile_u1: float = 1e-3
    agile_step_factor: float = 0.01  # probe spacing w = agile_u1 * factor
    ln_noise_target: float = -5.2
    tian_window: tuple[float, float] = (0.9, 0.999)
    max_hist_len: int | None = None

    def __post_init__(self):
        if self.sem_tolerance <= 0 or self.agile_u1 <= 0:
            raise ValueError("tolerances must be positive")
        lo, hi = self.tian_window
        if not (0 < lo < hi < 1):
            raise ValueError("tian window must lie inside (0, 1)")


@dataclass
class RateMatrix:
    R: np.ndarray
    probe_offsets: list[list[float]]  # per parameter, offsets actually probed
    probe_counts: np.ndarray
    per_column_converged: np.ndarray
    betas: np.ndarray | None = None  # per-parameter noise coefficients (agile)

    @property
    def converged(self) -> bool:
        return bool(np.all(self.per_column_converged))


@dataclass
class SemReport:
    method: str
    observed_info: np.ndarray | None
    V: np.ndarray | None
    mre: float | None
    betas: np.ndarray | None
    rate: RateMatrix | None
    elapsed: float
    failure: dict | None = None

    @property
    def ok(self) -> bool:
        return self.failure is None

    def standard_errors(self) -> np.ndarray:
        if self.V is None:
            raise SemProbeError("no covariance available")
        return np.sqrt(np.diag(self.V))


def probe_em(model: EMModel, theta_hat: np.ndarray, j: int, epsilon: float) -> np.ndarray:
    """One forward-difference column: (M(theta_hat + eps*e_j) - theta_hat)/eps."""
    if epsilon == 0:
        raise ValueError("epsilon must be nonzero")
    meta = model.param_meta()
    lo, hi = meta.free_bounds() if meta.n_free == theta_hat.size else (None, None)
    probe = theta_hat.copy()
    probe[j] += epsilon
    if lo is not None and not (lo[j] <= probe[j] <= hi[j]):
        raise BoundViolation(f"probe leaves bounds for parameter {j}")
    try:
        mapped = model.cycle(probe)
    except SemProbeError as exc:
        raise BoundViolation(f"probe at {epsilon!r} infeasible: {exc}") from exc
    return (mapped - theta_hat) / epsilon


def record_diff(
    col_a: np.ndarray,
    col_b: np.ndarray,
    offset_a: float,
    offset_b: float,
    sem_tolerance: float,
) -> tuple[float, bool]:
    """Stability bookkeeping for a probe pair.

    meng_ok: every element changed by strictly less than sem_tolerance.
    std_diff: mean absolute change per unit of probe spacing.
    """
    if offset_a == offset_b:
        raise ValueError("probe offsets must differ")
    diff = np.abs(np.asarray(col_a) - np.asarray(col_b))
    meng_ok = bool(np.all(diff < sem_tolerance))
    std_diff = float(diff.sum() / (diff.size * abs(offset_a - offset_b)))
    return std_diff, meng_ok


def _probe_with_retry(model, theta_hat, j, epsilon, offsets_log):
    """Probe; on bound violation flip the sign, then shrink, up to 4 times."""
    eps = epsilon
    tried = 0
    while True:
        for candidate in (eps, -eps):
            try:
                col = probe_em(model, theta_hat, j, candidate)
                offsets_log.append(float(candidate))
                return col, candidate
            except BoundViolation:
                continue
        tried += 1
        if tried >= 4:
            raise BoundViolation(f"no feasible probe offset for parameter {j}")
        eps *= 0.5


def agile_column(
    model: EMModel, theta_hat: np.ndarray, j: int, config: SemConfig
) -> tuple[np.ndarray, float, list[float]]:
    """Three-probe column: measure noise at u1, solve the offset, accept.

    Returns (column, beta, probe offsets). Always converges.
    """
    offsets: list[float] = []
    col1, off1 = _probe_with_retry(model, theta_hat, j, config.agile_u1, offsets)
    step = abs(off1) * config.agile_step_factor
    col2, off2 = _probe_with_retry(model, theta_hat, j, off1 + np.sign(off1) * step, offsets)
    std_diff, _ = record_diff(col1, col2, off1, off2, config.sem_tolerance)
    mid = (off1 + off2) / 2.0
    beta = std_diff * mid * mid
    if beta > 0:
        eps = float(np.sqrt(beta / np.exp(config.ln_noise_target)))
    else:
        # noise-free (e.g. exactly linear) map: any offset is exact
        eps = config.agile_u1
    col3, _ = _probe_with_retry(model, theta_hat, j, np.sign(off1) * eps, offsets)
    return col3, float(beta), offsets


def history_column(
    model: EMModel,
    theta_hat: np.ndarray,
    j: int,
    history: list[np.ndarray],
    config: SemConfig,
) -> tuple[np.ndarray | None, bool, list[float]]:
    """History-driven column: probe at successive trajectory offsets until
    a consecutive pair is stable. Non-convergence is a reported state."""
    tol = config.sem_tolerance
    offsets: list[float] = []
    cols: list[np.ndarray] = []
    converged = False
    accepted = None
    for est in history:
        offset = float(est[j] - theta_hat[j])
        if offsets and abs(offsets[-1] - offset) < tol:
            continue  # too close to the previous probe
        if abs(offset) < tol:
            continue  # too close to the MLE
        try:
            col = probe_em(model, theta_hat, j, offset)
        except BoundViolation:
            continue
        offsets.append(offset)
        cols.append(col)
        if len(cols) < 2:
            continue
        _, meng_ok = record_diff(cols[-2], cols[-1], offsets[-2], offsets[-1], tol)
        if meng_ok:
            converged = True
            accepted = cols[-1]
            break
    return accepted, converged, offsets


def tian_window(ll_history: list[float], window: tuple[float, float] = (0.9, 0.999)) -> list[int]:
    """Iteration indices whose absolute log-likelihood change falls in the
    standardized closeness window."""
    if len(ll_history) < 2:
        raise ValueError("need at least two log-likelihood values")
    lo, hi = window
    out = []
    for t in range(len(ll_history) - 1):
        delta = float(np.exp(-abs(ll_history[t] - ll_history[t + 1])))
        if lo <= delta <= hi:
            out.append(t)
    if not out:
        raise EmptyWindow("no iteration falls in the closeness window")
    return out


def estimate_rate_matrix(
    model: EMModel,
    theta_hat: np.ndarray,
    method: str,
    config: SemConfig | None = None,
    run: EMRun | None = None,
) -> RateMatrix:
    """Column-by-column Jacobian estimate of the EM map at the MLE."""
    config = config or SemConfig()
    method = method.lower()
    if method not in METHODS:
        raise ValueError(f"unknown SEM method {method!r}")
    d = theta_hat.size
    R = np.full((d, d), np.nan)
    probe_offsets: list[list[float]] = [[] for _ in range(d)]
    counts = np.zeros(d, dtype=int)
    conv = np.zeros(d, dtype=bool)
    betas = np.full(d, np.nan) if method == "agile" else None

    history: list[np.ndarray] | None = None
    if method in ("mr", "tian"):
        if run is None:
            raise ValueError(f"{method} needs the EM run history")
        if method == "mr":
            history = run.trajectory
        else:
            idx = tian_window(run.ll_history, config.tian_window)
            history = [run.trajectory[t] for t in idx]

    for j in range(d):
        if method == "agile":
            col, beta, offs = agile_column(model, theta_hat, j, config)
            betas[j] = beta
            conv[j] = True
        else:
            col, ok, offs = history_column(model, theta_hat, j, history, config)
            conv[j] = ok
        probe_offsets[j] = offs
        counts[j] = len(offs)
        if conv[j]:
            R[:, j] = col
        else:
            break  # a single failed column spoils the whole matrix
    return RateMatrix(
        R=R,
        probe_offsets=probe_offsets,
        probe_counts=counts,
        per_column_converged=conv,
        betas=betas,
    )


def assemble(rate: RateMatrix, complete_info: np.ndarray, method: str = "") -> SemReport:
    """Observed information (I - R.T) @ Ic, covariance, and asymmetry error.

    MRE is computed on the raw inverse before symmetrization; failures
    (non-convergence, singular or non-positive definite information) are
    recorded on the report rather than raised.
    """
    t0 = time.perf_counter()
    d = complete_info.shape[0]
    if not rate.converged:
        bad = int(np.argmin(rate.per_column_converged))
        return SemReport(
            method=method, observed_info=None, V=None, mre=None,
            betas=rate.betas, rate=rate, elapsed=time.perf_counter() - t0,
            failure={"column": bad, "reason": "column did not converge"},
        )
    info = (np.eye(d) - rate.R.T) @ complete_info
    try:
        v_raw = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return SemReport(
            method=method, observed_info=info, V=None, mre=None,
            betas=rate.betas, rate=rate, elapsed=time.perf_counter() - t0,
            failure={"column": None, "reason": "singular information matrix"},
        )
    try:
        mre_val = float(mre(v_raw))
    except SemProbeError:
        mre_val = float("nan")
    info_sym = (info + info.T) / 2.0
    v = (v_raw + v_raw.T) / 2.0
    failure = None
    if not is_positive_definite(info_sym):
        failure = {"column": None, "reason": "information not positive definite"}
    return SemReport(
        method=method, observed_info=info_sym, V=v, mre=mre_val,
        betas=rate.betas, rate=rate, elapsed=time.perf_counter() - t0,
        failure=failure,
    )


def sem_standard_errors(
    model: EMModel,
    theta_hat: np.ndarray,
    method: str,
    config: SemConfig | None = None,
    run: EMRun | None = None,
    complete_info: np.ndarray | None = None,
) -> SemReport:
    """Full pipeline: rate matrix, assembly, timing."""
    t0 = time.perf_counter()
    config = config or SemConfig(method=method)
    if complete_info is None:
        complete_info = model.complete_info(theta_hat)
    try:
        rate = estimate_rate_matrix(model, theta_hat, method, config, run)
    except (EmptyWindow, BoundViolation) as exc:
        return SemReport(
            method=method, observed_info=None, V=None, mre=None, betas=None,
            rate=None, elapsed=time.perf_counter() - t0,
            failure={"column": None, "reason": str(exc)},
        )
    report = assemble(rate, complete_info, method=method)
    report.elapsed = time.perf_counter() - t0
    return report


def noise_curve(
    model: EMModel,
    theta_hat: np.ndarray,
    j: int,
    u_grid: np.ndarray,
    w: float = 1e-5,
) -> list[tuple[float, float]]:
    """Measured noise intensity nu_j(u) from probe pairs at u -+ w/2."""
    d = theta_hat.size
    points = []
    for u in np.asarray(u_grid, dtype=float):
        try:
            col_a = probe_em(model, theta_hat, j, u - w / 2.0)
            col_b = probe_em(model, theta_hat, j, u + w / 2.0)
        except BoundViolation:
            continue  # infeasible point: skipped, not fatal
        nu = float(np.abs(col_a - col_b).sum() / (d * w))
        points.append((float(u), nu))
    return points


def target_sweep(
    model: EMModel,
    theta_hat: np.ndarray,
    ln_targets: np.ndarray,
    truth: np.ndarray,
    config: SemConfig | None = None,
    complete_info: np.ndarray | None = None,
) -> list[dict]:
    """Error of the three-probe estimator over a grid of noise targets.

    For each candidate target, estimate the covariance and record the
    three error panels (log KL, RD norm, MRE) against a reference
    covariance. Per-target failures are recorded and the sweep continues.
    """
    base = config or SemConfig()
    if complete_info is None:
        complete_info = model.complete_info(theta_hat)
    se_true = np.sqrt(np.diag(truth))
    rows = []
    for ln_t in np.asarray(ln_targets, dtype=float):
        cfg = SemConfig(
            method="agile",
            sem_tolerance=base.sem_tolerance,
            agile_u1=base.agile_u1,
            agile_step_factor=base.agile_step_factor,
            ln_noise_target=float(ln_t),
            tian_window=base.tian_window,
        )
        report = sem_standard_errors(
            model, theta_hat, "agile", cfg, complete_info=complete_info
        )
        row = {"ln_target": float(ln_t), "failure": report.failure}
        if report.ok:
            try:
                kl = kl_divergence(truth, report.V)
                row["log_kl"] = float(np.log(kl)) if kl > 0 else float("-inf")
            except SemProbeError:
                row["log_kl"] = float("nan")
            row["rd_norm"] = rd_norm(report.standard_errors(), se_true)
            row["mre"] = report.mre
        else:
            row["log_kl"] = row["rd_norm"] = row["mre"] = float("nan")
        rows.append(row)
    return rows


def fit_noise_model(points: list[tuple[float, float]]) -> tuple[float, float]:
    """Least squares of nu on 1/u**2 through the origin; returns (beta, R2)."""
    if len(points) < 3:
        raise ValueError("need at least 3 measurements")
    u = np.array([p[0] for p in points])
    nu = np.array([p[1] for p in points])
    if np.any(u <= 0):
        raise ValueError("u grid must be positive")
    if np.all(nu == 0):
        raise DegenerateFit("all noise measurements are zero")
    x = u**-2.0
    beta = float((x @ nu) / (x @ x))
    resid = nu - beta * x
    ss_tot = float(((nu - nu.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else float("nan")
    return beta, r2
