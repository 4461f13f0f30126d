import numpy as np
import pytest

from semprobe.builtin import builtin_spec
from semprobe.emcore import EMConfig, run_em
from semprobe.errors import GridBudgetExceeded
from semprobe.fit import IfaGroupSpec, IfaModel, build_quadrature
from semprobe.harness import fit_builtin, simulate_data, start_vector
from semprobe.items import ItemSpec, LatentDist, ResponseData, sample_responses


def small_model(n=400, seed=3, missing=False):
    items = [
        ItemSpec(kind="dichotomous", slopes=[1.2], intercepts=[0.5]),
        ItemSpec(kind="dichotomous", slopes=[0.8], intercepts=[-0.7]),
        ItemSpec(kind="dichotomous", slopes=[1.5], intercepts=[0.0]),
        ItemSpec(kind="graded", slopes=[1.0], intercepts=[1.0, -0.5], K=3),
        ItemSpec(kind="graded", slopes=[1.8], intercepts=[0.5, -1.0], K=3),
    ]
    latent = LatentDist(mean=[0.0], var=[1.0])
    data = sample_responses(items, latent, n, seed)
    if missing:
        patterns = data.patterns.copy()
        patterns[0, 0] = -1
        data = ResponseData(patterns=patterns, freq=data.freq)
    group = IfaGroupSpec(name="g", items=items, latent=latent, n=n)
    quad = build_quadrature(1, 49, -6, 6)
    return IfaModel([group], [data], [quad], EMConfig())


# --- quadrature ---------------------------------------------------------------


def test_quadrature_grid_shape_and_weights():
    q = build_quadrature(2, 21, -5, 5)
    assert q.points.shape == (441, 2)
    assert q.base_weights.sum() == pytest.approx(1.0)
    assert q.points[0, 0] == -5 and q.points[-1, -1] == 5


def test_quadrature_budget():
    with pytest.raises(GridBudgetExceeded):
        build_quadrature(5, 21, -5, 5, budget=10**6)


def test_quadrature_validation():
    with pytest.raises(ValueError):
        build_quadrature(1, 2)
    with pytest.raises(ValueError):
        build_quadrature(1, 21, 3, -3)


# --- fitting ------------------------------------------------------------------


def test_small_model_fit_monotone_and_converged():
    model = small_model()
    run = run_em(model, model.start_values(), EMConfig())
    assert run.converged
    ll = run.ll_history
    slack = 10 * 1e-11 * max(abs(v) for v in ll)
    assert all(ll[t + 1] >= ll[t] - slack for t in range(len(ll) - 1))


def test_fit_with_missing_responses():
    model = small_model(missing=True)
    run = run_em(model, model.start_values(), EMConfig())
    assert run.converged
    assert np.all(np.isfinite(run.theta_hat))


def test_cycle_fixed_point():
    model = small_model()
    run = run_em(model, model.start_values(), EMConfig(rel_ll_tolerance=1e-13))
    moved = model.cycle(run.theta_hat) - run.theta_hat
    assert np.abs(moved).max() < 1e-5


def test_complete_info_symmetric_pd():
    model = small_model()
    run = run_em(model, model.start_values(), EMConfig())
    info = model.complete_info(run.theta_hat)
    assert np.array_equal(info, info.T)
    assert np.all(np.linalg.eigvalsh(info) > 0)


def test_large_n_parameter_recovery():
    """Estimates approach generating values as n grows (consistency sanity)."""
    model = small_model(n=8000, seed=11)
    run = run_em(model, model.start_values(), EMConfig())
    gen = model.param_meta().values
    assert np.abs(run.theta_hat - gen).max() < 0.15


def test_equality_constraint_shares_one_slot():
    bm = builtin_spec("m3pl15")
    data = simulate_data(bm, 2)
    from semprobe.harness import make_model

    model = make_model(bm, data, EMConfig())
    names = model.param_meta().names
    # 15 items x (a, c, g) with all slopes equated -> 1 + 15 + 15 free slots
    assert len(names) == 31


def test_m2pl5_fit_matches_generating_roughly(m2pl5_fit):
    bm, model, run = m2pl5_fit
    assert run.converged
    gen = model.param_meta().values
    # intercept of the steepest item is +-6; tolerate wide MC error there
    assert np.abs(run.theta_hat - gen).max() < 3.0
    assert np.abs(run.theta_hat[:4] - gen[:4]).max() < 0.35


def test_grm20_dimensions_and_identification(grm20_fit):
    bm, model, run = grm20_fit
    assert run.converged
    assert run.theta_hat.size == 60
    from semprobe.metrics import condition_log

    assert condition_log(model.complete_info(run.theta_hat)) < bm.screen_log_cond


def test_estep_deterministic():
    model = small_model()
    theta = model.start_values()
    a = model.cycle(theta)
    b = model.cycle(theta)
    assert np.array_equal(a, b)


def test_observed_ll_includes_prior():
    bm = builtin_spec("m3pl15")
    data = simulate_data(bm, 2)
    from semprobe.harness import make_model

    model = make_model(bm, data, EMConfig())
    theta = start_vector(bm, model)
    assert model.observed_ll(theta) != pytest.approx(model.observed_data_ll(theta))
