import numpy as np
import pytest

from semprobe.emcore import EMConfig, EMRun, run_em
from semprobe.errors import BoundViolation, DegenerateFit, EmptyWindow
from semprobe.params import ParamVector
from semprobe.sem import (
    SemConfig,
    agile_column,
    assemble,
    estimate_rate_matrix,
    fit_noise_model,
    noise_curve,
    probe_em,
    record_diff,
    sem_standard_errors,
    target_sweep,
    tian_window,
)


class LinearMapModel:
    """Exactly linear EM map M(theta) = that + A (theta - that)."""

    def __init__(self, theta_hat, A, Ic):
        self.theta_hat = np.asarray(theta_hat, dtype=float)
        self.A = np.asarray(A, dtype=float)
        self.Ic = np.asarray(Ic, dtype=float)
        self.Io = (np.eye(self.A.shape[0]) - self.A) @ self.Ic

    def cycle(self, theta):
        return self.theta_hat + self.A @ (theta - self.theta_hat)

    def observed_ll(self, theta):
        d = theta - self.theta_hat
        return float(-0.5 * d @ self.Io @ d)

    def complete_info(self, theta):
        return self.Ic.copy()

    def param_meta(self):
        d = self.theta_hat.size
        return ParamVector(values=self.theta_hat, names=[f"p{i}" for i in range(d)])


def linear_model(d=4, seed=0):
    """Linear EM map sharing an eigenbasis with the complete information,
    so missing info A @ Ic is symmetric PD and (I - A) Ic is the observed
    information regardless of Jacobian orientation convention."""
    rng = np.random.default_rng(seed)
    q = np.linalg.qr(rng.standard_normal((d, d)))[0]
    Ic = q @ np.diag(rng.uniform(1.0, 10.0, d)) @ q.T
    A = q @ np.diag(rng.uniform(0.2, 0.8, d)) @ q.T
    # a zero fixed point keeps the probe differences free of cancellation
    # error, so the probes recover A to machine precision
    return LinearMapModel(np.zeros(d), A, Ic)


def linear_run(model, start_scale=1.0):
    start = model.theta_hat + start_scale * np.ones_like(model.theta_hat)
    return run_em(model, start, EMConfig(rel_ll_tolerance=1e-14, max_iterations=200))


# --- probe primitives ----------------------------------------------------------


def test_probe_em_linear_exact():
    model = linear_model()
    for j in range(4):
        for eps in (1e-3, 1e-2, 0.3):
            col = probe_em(model, model.theta_hat, j, eps)
            assert np.allclose(col, model.A[:, j], atol=1e-12)


def test_probe_requires_nonzero_offset():
    model = linear_model()
    with pytest.raises(ValueError):
        probe_em(model, model.theta_hat, 0, 0.0)


def test_record_diff_hand_example():
    col_a = np.array([0.0, 0.0])
    col_b = np.array([1e-4, 3e-4])
    std_diff, meng_ok = record_diff(col_a, col_b, 1.0, 1.0 + 1e-5, 1e-3)
    assert std_diff == pytest.approx(20.0)
    assert meng_ok


def test_record_diff_strict_tolerance():
    col = np.array([0.0, 1e-3])
    _, meng_ok = record_diff(np.zeros(2), col, 1.0, 2.0, 1e-3)
    assert not meng_ok  # comparison is strict


def test_agile_always_three_probes():
    model = linear_model()
    for j in range(4):
        col, beta, offsets = agile_column(model, model.theta_hat, j, SemConfig())
        assert len(offsets) == 3
        assert np.allclose(col, model.A[:, j], atol=1e-12)
        assert beta == pytest.approx(0.0, abs=1e-12)


def test_bound_retry_flips_then_shrinks():
    model = linear_model()

    class Bounded(LinearMapModel):
        def cycle(self, theta):
            if theta[0] > self.theta_hat[0] + 5e-4:
                raise BoundViolation("out of range")
            return super().cycle(theta)

    bounded = Bounded(model.theta_hat, model.A, model.Ic)
    col, beta, offsets = agile_column(bounded, bounded.theta_hat, 0, SemConfig())
    assert all(o < 0 or abs(o) <= 5e-4 for o in offsets)
    assert np.allclose(col, model.A[:, 0], atol=1e-12)


# --- window and history selection -----------------------------------------------


def test_tian_window_selects_midrange():
    ll = [-100.0, -99.0, -99.5 + 0.49, -99.005, -99.0049, -99.00489]
    idx = tian_window(ll, (0.9, 0.999))
    deltas = [np.exp(-abs(ll[t] - ll[t + 1])) for t in range(len(ll) - 1)]
    assert idx == [t for t, d in enumerate(deltas) if 0.9 <= d <= 0.999]
    assert idx  # nonempty here


def test_tian_window_constant_ll_empty():
    with pytest.raises(EmptyWindow):
        tian_window([-5.0, -5.0, -5.0])


def test_history_skip_rules():
    model = linear_model()
    # all history offsets below tolerance -> zero probes, not converged
    run = EMRun(
        trajectory=[model.theta_hat + 1e-5, model.theta_hat + 5e-6],
        ll_history=[-1.0, -0.9],
        converged=True,
        iterations=1,
        theta_hat=model.theta_hat,
    )
    rate = estimate_rate_matrix(model, model.theta_hat, "mr", SemConfig(), run)
    assert not rate.converged
    assert rate.probe_counts[0] == 0


def test_mr_on_linear_history_converges_in_two_probes():
    model = linear_model()
    run = linear_run(model)
    rate = estimate_rate_matrix(model, model.theta_hat, "mr", SemConfig(), run)
    assert rate.converged
    assert np.all(rate.probe_counts == 2)
    assert np.allclose(rate.R, model.A, atol=1e-12)


# --- assembly --------------------------------------------------------------------


def test_linear_map_exactness_all_methods():
    model = linear_model()
    run = linear_run(model)
    v_expected = np.linalg.inv((np.eye(4) - model.A) @ model.Ic)
    for method in ("mr", "tian", "agile"):
        report = sem_standard_errors(model, model.theta_hat, method, SemConfig(method=method), run=run)
        assert report.ok, report.failure
        assert np.abs(report.V - v_expected).max() < 1e-10
        assert report.mre < 1e-8


def test_assemble_records_nonconvergence():
    model = linear_model()
    run = EMRun(
        trajectory=[model.theta_hat + 1e-6],
        ll_history=[-1.0],
        converged=True,
        iterations=0,
        theta_hat=model.theta_hat,
    )
    rate = estimate_rate_matrix(model, model.theta_hat, "mr", SemConfig(), run)
    report = assemble(rate, model.Ic, method="mr")
    assert not report.ok
    assert report.failure["reason"] == "column did not converge"


def test_reproducibility_of_rate_matrix():
    model = linear_model(seed=5)
    a = estimate_rate_matrix(model, model.theta_hat, "agile", SemConfig())
    b = estimate_rate_matrix(model, model.theta_hat, "agile", SemConfig())
    assert np.array_equal(a.R, b.R)
    assert a.probe_offsets == b.probe_offsets


# --- fixture-level pipeline -------------------------------------------------------


def test_fixture_all_methods_near_analytic(fixture_model, fixture_run):
    analytic = fixture_model.observed_info(fixture_run.theta_hat)[0, 0]
    for method, tol in (("mr", 2e-3), ("tian", 2e-3), ("agile", 1e-3)):
        report = sem_standard_errors(
            fixture_model, fixture_run.theta_hat, method,
            SemConfig(method=method, sem_tolerance=tol), run=fixture_run,
        )
        assert report.ok, (method, report.failure)
        assert report.observed_info[0, 0] == pytest.approx(analytic, rel=0.01)


# --- noise curve and model ---------------------------------------------------------


def test_noise_curve_and_fit(fixture_model, fixture_run):
    pts = noise_curve(fixture_model, fixture_run.theta_hat, 0, np.geomspace(1e-4, 1e-1, 10))
    assert len(pts) == 10
    beta, r2 = fit_noise_model(pts)
    assert beta > 0
    assert 0.9 < r2 <= 1.0


def test_fit_noise_model_validation():
    with pytest.raises(ValueError):
        fit_noise_model([(1e-3, 1.0), (1e-2, 0.5)])
    with pytest.raises(DegenerateFit):
        fit_noise_model([(1e-3, 0.0), (1e-2, 0.0), (1e-1, 0.0)])


def test_target_sweep_on_linear_model():
    model = linear_model()
    truth = np.linalg.inv(model.Io)
    truth = (truth + truth.T) / 2
    rows = target_sweep(model, model.theta_hat, np.array([-8.0, -5.2, -4.0]), truth)
    assert [r["ln_target"] for r in rows] == [-8.0, -5.2, -4.0]
    for r in rows:
        assert r["failure"] is None
        assert r["rd_norm"] == pytest.approx(0.0, abs=1e-8)
