"""Study driver: fixtures, per-trial pipeline, and study summaries."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .builtin import BuiltinModel, builtin_spec
from .emcore import EMConfig, EMRun, run_em
from .errors import SemProbeError
from .fit import IfaModel, build_quadrature
from .items import ResponseData, sample_responses
from .metrics import (
    condition_log,
    is_positive_definite,
    kl_divergence,
    mc_ground_truth,
    mre,
    rd_norm,
)
from .numdiff import RichardsonConfig, richardson_hessian
from .params import ParamVector
from .sem import SemConfig, sem_standard_errors

ESTIMATORS = ("mstep", "mr", "tian", "agile", "richardson")


class MultinomialLinkageModel:
    """Four-cell multinomial with one parameter and an EM split of cell 1.

    Counts (125, 18, 20, 34) over cell probabilities
    (1/2 + t/4, (1-t)/4, (1-t)/4, t/4). The EM algorithm splits the first
    cell into its 1/2 and t/4 components; complete and observed
    information are available analytically, which makes this a fully
    independent testbed for the SEM machinery.
    """

    counts = (125.0, 18.0, 20.0, 34.0)

    def __init__(self):
        self._meta = ParamVector(
            values=np.array([0.5]),
            names=["theta"],
            lower=np.array([1e-9]),
            upper=np.array([1.0 - 1e-9]),
        )

    def param_meta(self) -> ParamVector:
        return self._meta

    def _split(self, t: float) -> float:
        y1 = self.counts[0]
        return y1 * (t / 4.0) / (0.5 + t / 4.0)

    def cycle(self, theta: np.ndarray) -> np.ndarray:
        t = float(theta[0])
        _, y2, y3, y4 = self.counts
        x12 = self._split(t)
        return np.array([(x12 + y4) / (x12 + y2 + y3 + y4)])

    def observed_ll(self, theta: np.ndarray) -> float:
        t = float(theta[0])
        y1, y2, y3, y4 = self.counts
        return float(
            y1 * np.log(0.5 + t / 4.0)
            + (y2 + y3) * np.log((1.0 - t) / 4.0)
            + y4 * np.log(t / 4.0)
        )

    def complete_info(self, theta: np.ndarray) -> np.ndarray:
        t = float(theta[0])
        _, y2, y3, y4 = self.counts
        x12 = self._split(t)
        return np.array([[(x12 + y4) / t**2 + (y2 + y3) / (1.0 - t) ** 2]])

    def observed_info(self, theta: np.ndarray) -> np.ndarray:
        """Analytic negative Hessian of the observed log-likelihood."""
        t = float(theta[0])
        y1, y2, y3, y4 = self.counts
        return np.array(
            [[y1 / 16.0 / (0.5 + t / 4.0) ** 2 + (y2 + y3) / (1.0 - t) ** 2 + y4 / t**2]]
        )


def multinomial_linkage_fixture() -> MultinomialLinkageModel:
    return MultinomialLinkageModel()


@dataclass
class StudySpec:
    model_name: str
    replications: int = 20
    seed_base: int = 1
    estimators: tuple[str, ...] = ("mstep", "mr", "tian", "agile", "richardson")
    em_config: EMConfig = field(default_factory=lambda: EMConfig(rel_ll_tolerance=1e-11))
    sem_config: SemConfig = field(default_factory=SemConfig)
    richardson_config: RichardsonConfig = field(default_factory=RichardsonConfig)
    screen_log_cond: float | None = None  # None: use the model default
    ground_truth: str = "richardson"  # or "mc", or "none" to skip accuracy scoring
    grid_budget: int = 10**6

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown:
            raise ValueError(f"unknown estimators: {sorted(unknown)}")


@dataclass
class EstimatorResult:
    converged: bool
    elapsed: float
    V: np.ndarray | None = None
    mre: float | None = None
    reason: str | None = None
    log_kl: float = float("nan")
    rd: float = float("nan")


@dataclass
class TrialResult:
    trial: int
    fit_converged: bool
    identified: bool
    log_cond: float
    theta_hat: np.ndarray | None
    estimators: dict[str, EstimatorResult] = field(default_factory=dict)


def make_model(
    bm: BuiltinModel, data: list[ResponseData], config: EMConfig, grid_budget: int = 10**6
) -> IfaModel:
    quads = [
        build_quadrature(
            g.latent.f, bm.points_per_dim, bm.z_lo, bm.z_hi, budget=grid_budget
        )
        for g in bm.groups
    ]
    return IfaModel(bm.groups, data, quads, config)


def simulate_data(bm: BuiltinModel, seed: int) -> list[ResponseData]:
    return [
        sample_responses(g.items, g.latent, g.n, (seed, gi))
        for gi, g in enumerate(bm.groups)
    ]


def start_vector(bm: BuiltinModel, model: IfaModel) -> np.ndarray:
    gen = model.param_meta().values
    return np.array(
        [bm.start_rule(kind, gen[i]) for i, kind in enumerate(model.slot_kinds)]
    )


def fit_builtin(
    bm: BuiltinModel,
    data: list[ResponseData],
    config: EMConfig,
    grid_budget: int = 10**6,
) -> tuple[IfaModel, EMRun]:
    model = make_model(bm, data, config, grid_budget)
    run = run_em(model, start_vector(bm, model), config)
    return model, run


def _estimate_v(model, run: EMRun, name: str, spec: StudySpec):
    """(EstimatorResult-without-metrics) for one estimator on a fitted model."""
    theta_hat = run.theta_hat
    t0 = time.perf_counter()
    if name == "mstep":
        info = model.complete_info(theta_hat)
        try:
            v = np.linalg.inv(info)
        except np.linalg.LinAlgError:
            return EstimatorResult(False, time.perf_counter() - t0, reason="singular")
        if not is_positive_definite((info + info.T) / 2):
            return EstimatorResult(
                False, time.perf_counter() - t0, reason="not positive definite"
            )
        return EstimatorResult(True, time.perf_counter() - t0, V=(v + v.T) / 2, mre=0.0)
    if name == "richardson":
        hess = richardson_hessian(model.observed_ll, theta_hat, spec.richardson_config)
        info = -hess
        if not is_positive_definite(info):
            return EstimatorResult(
                False, time.perf_counter() - t0, reason="not positive definite"
            )
        v = np.linalg.inv(info)
        return EstimatorResult(True, time.perf_counter() - t0, V=(v + v.T) / 2, mre=0.0)
    # SEM family
    report = sem_standard_errors(
        model, theta_hat, name, spec.sem_config, run=run
    )
    if not report.ok:
        return EstimatorResult(
            False, time.perf_counter() - t0, reason=report.failure["reason"]
        )
    return EstimatorResult(
        True, time.perf_counter() - t0, V=report.V, mre=report.mre
    )


def run_trial(spec: StudySpec, trial: int, truth: np.ndarray | None = None) -> TrialResult:
    """One replication: simulate, fit, screen, estimate, score."""
    bm = builtin_spec(spec.model_name)
    data = simulate_data(bm, spec.seed_base + trial)
    model, run = fit_builtin(bm, data, spec.em_config, spec.grid_budget)
    threshold = (
        spec.screen_log_cond if spec.screen_log_cond is not None else bm.screen_log_cond
    )
    result = TrialResult(
        trial=trial,
        fit_converged=run.converged,
        identified=True,
        log_cond=float("nan"),
        theta_hat=run.theta_hat if run.converged else None,
    )
    if not run.converged:
        result.identified = False
        for name in spec.estimators:
            result.estimators[name] = EstimatorResult(False, 0.0, reason="fit did not converge")
        return result
    info = model.complete_info(run.theta_hat)
    result.log_cond = condition_log(info)
    if result.log_cond > threshold:
        result.identified = False
        for name in spec.estimators:
            result.estimators[name] = EstimatorResult(False, 0.0, reason="unidentified")
        return result
    for name in spec.estimators:
        try:
            result.estimators[name] = _estimate_v(model, run, name, spec)
        except SemProbeError as exc:
            result.estimators[name] = EstimatorResult(False, 0.0, reason=str(exc))
    # score against the reference covariance
    if spec.ground_truth == "none":
        return result
    if truth is None and spec.ground_truth == "richardson":
        re_res = result.estimators.get("richardson")
        if re_res is None or not re_res.converged:
            try:
                re_res = _estimate_v(model, run, "richardson", spec)
            except SemProbeError:
                re_res = None
        truth = re_res.V if re_res is not None and re_res.converged else None
    if truth is not None:
        se_true = np.sqrt(np.diag(truth))
        for name, est in result.estimators.items():
            if not est.converged or est.V is None:
                continue
            try:
                kl = kl_divergence(truth, est.V)
                # the reference estimator scored against itself gives kl ~ 0
                est.log_kl = float(np.log(kl)) if kl > 0 else float("-inf")
            except SemProbeError:
                est.log_kl = float("nan")
            try:
                est.rd = rd_norm(np.sqrt(np.diag(est.V)), se_true)
            except SemProbeError:
                est.rd = float("nan")
    return result


def run_study(spec: StudySpec, progress=None) -> list[TrialResult]:
    results = []
    truth = None
    if spec.ground_truth == "mc":
        mles = []
        for t in range(spec.replications):
            bm = builtin_spec(spec.model_name)
            data = simulate_data(bm, spec.seed_base + t)
            _, run = fit_builtin(bm, data, spec.em_config, spec.grid_budget)
            if run.converged:
                mles.append(run.theta_hat)
        gen = None
        bm = builtin_spec(spec.model_name)
        model = make_model(bm, simulate_data(bm, spec.seed_base), spec.em_config)
        gen = model.param_meta().values
        truth, _, _ = mc_ground_truth(np.vstack(mles), gen)
    for t in range(spec.replications):
        results.append(run_trial(spec, t, truth=truth))
        if progress is not None:
            progress(t + 1, spec.replications)
    return results


def summarize_study(results: list[TrialResult]) -> dict:
    """Per-estimator failure percentages and accuracy/time means.

    Accuracy means exclude trials where the estimator failed.
    """
    if not results:
        raise ValueError("need at least one trial result")
    names = list(results[0].estimators.keys())
    n = len(results)
    failure = {}
    seconds = {}
    log_kl = {}
    rd = {}
    for name in names:
        fails = sum(1 for r in results if not r.estimators[name].converged)
        failure[name] = 100.0 * fails / n
        ok = [r.estimators[name] for r in results if r.estimators[name].converged]
        seconds[name] = float(np.mean([e.elapsed for e in ok])) if ok else float("nan")
        kls = [e.log_kl for e in ok if np.isfinite(e.log_kl)]
        rds = [e.rd for e in ok if np.isfinite(e.rd)]
        log_kl[name] = float(np.mean(kls)) if kls else float("nan")
        rd[name] = float(np.mean(rds)) if rds else float("nan")
    return {
        "n_trials": n,
        "n_unidentified": sum(1 for r in results if not r.identified),
        "failure_pct": failure,
        "mean_seconds": seconds,
        "mean_log_kl": log_kl,
        "mean_rd_norm": rd,
    }
