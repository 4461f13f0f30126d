import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semprobe.emcore import (
    EMConfig,
    EMRun,
    additive_precision_limit,
    rel_ll_change,
    run_em,
)
from semprobe.errors import NonFiniteLL, ZeroDenominator


def test_config_validation():
    with pytest.raises(ValueError):
        EMConfig(rel_ll_tolerance=0)
    with pytest.raises(ValueError):
        EMConfig(max_iterations=0)


def test_fixture_convergence(fixture_model, fixture_run):
    run = fixture_run
    assert run.converged
    assert run.theta_hat[0] == pytest.approx(0.62682148, abs=1e-6)
    assert len(run.trajectory) == len(run.ll_history) == run.iterations + 1


def test_monotone_ascent(fixture_model, fixture_run):
    ll = fixture_run.ll_history
    slack = 10 * 1e-13 * max(abs(v) for v in ll)
    assert all(ll[t + 1] >= ll[t] - slack for t in range(len(ll) - 1))


def test_trajectory_offsets(fixture_run):
    offs = fixture_run.offsets()
    assert offs.shape == (len(fixture_run.trajectory), 1)
    assert offs[-1, 0] == 0.0
    # offsets shrink monotonically for this contraction
    mags = np.abs(offs[:-1, 0])
    assert np.all(np.diff(mags) < 0)


def test_max_iterations_reported_not_raised(fixture_model):
    run = run_em(fixture_model, np.array([0.01]), EMConfig(rel_ll_tolerance=1e-13, max_iterations=2))
    assert not run.converged
    assert run.iterations == 2


def test_nonfinite_ll_raises():
    class Bad:
        def cycle(self, theta):
            return theta

        def observed_ll(self, theta):
            return float("nan")

    with pytest.raises(NonFiniteLL):
        run_em(Bad(), np.array([0.5]), EMConfig())


def test_rel_ll_change():
    assert rel_ll_change(-100.0, -100.001) == pytest.approx(1e-5)
    with pytest.raises(ZeroDenominator):
        rel_ll_change(0.0, 1.0)


def test_determinism(fixture_model):
    a = run_em(fixture_model, np.array([0.3]), EMConfig())
    b = run_em(fixture_model, np.array([0.3]), EMConfig())
    assert a.theta_hat[0] == b.theta_hat[0]
    assert a.ll_history == b.ll_history


# --- additive precision limit ------------------------------------------------


def test_additive_precision_examples():
    # at r = 1 the largest invisible addend is about exp(-37)
    lam = additive_precision_limit(1.0)
    assert np.log(lam) == pytest.approx(-37.0, abs=0.5)
    # at r = 1e9 it is about exp(-17): the limit scales with |r|
    lam9 = additive_precision_limit(1e9)
    assert np.log(lam9) == pytest.approx(-17.0, abs=0.5)


def test_additive_precision_definition():
    for r in (1.0, 1.5, 377.5, 1e-8, 1e9):
        lam = additive_precision_limit(r)
        assert abs(r) + lam == abs(r)
        assert abs(r) + np.nextafter(lam, np.inf) != abs(r)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-12, max_value=1e12, allow_nan=False))
def test_additive_precision_ratio_bounds(r):
    lam = additive_precision_limit(r)
    ratio = lam / r
    assert 2.0**-54 <= ratio <= 2.0**-53


def test_emrun_offsets_custom_reference():
    run = EMRun(
        trajectory=[np.array([1.0]), np.array([2.0])],
        ll_history=[-2.0, -1.0],
        converged=True,
        iterations=1,
        theta_hat=np.array([2.0]),
    )
    assert np.allclose(run.offsets(np.array([0.0])), [[1.0], [2.0]])
