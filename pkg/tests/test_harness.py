import numpy as np
import pytest

from semprobe import cli, iofmt
from semprobe.builtin import BUILTIN_NAMES, builtin_spec
from semprobe.emcore import EMConfig, run_em
from semprobe.errors import GridBudgetExceeded, UnknownSpec
from semprobe.harness import (
    StudySpec,
    fit_builtin,
    multinomial_linkage_fixture,
    run_trial,
    run_study,
    simulate_data,
    summarize_study,
)


# --- analytic fixture --------------------------------------------------------


def test_fixture_oracles(fixture_model, fixture_run):
    th = fixture_run.theta_hat
    assert th[0] == pytest.approx(0.62682, abs=1e-4)
    complete = fixture_model.complete_info(th)[0, 0]
    observed = fixture_model.observed_info(th)[0, 0]
    assert complete == pytest.approx(435.3, abs=0.1)
    assert observed == pytest.approx(377.5, abs=0.1)
    missing = complete - observed
    assert missing == pytest.approx(57.8, abs=0.1)
    assert missing / complete == pytest.approx(0.133, abs=0.001)


def test_fixture_observed_info_matches_central_difference(fixture_model, fixture_run):
    th = fixture_run.theta_hat[0]
    h = 1e-5
    fd = -(
        fixture_model.observed_ll(np.array([th + h]))
        - 2 * fixture_model.observed_ll(np.array([th]))
        + fixture_model.observed_ll(np.array([th - h]))
    ) / h**2
    assert fd == pytest.approx(fixture_model.observed_info(np.array([th]))[0, 0], rel=1e-5)


# --- builtin catalogue ---------------------------------------------------------


def test_builtin_names():
    assert set(BUILTIN_NAMES) == {"m2pl5", "m3pl15", "grm20", "cyh1"}
    with pytest.raises(UnknownSpec):
        builtin_spec("nope")


def test_builtin_shapes():
    assert sum(len(g.items) for g in builtin_spec("m2pl5").groups) == 5
    assert sum(len(g.items) for g in builtin_spec("m3pl15").groups) == 15
    assert sum(len(g.items) for g in builtin_spec("grm20").groups) == 20
    cyh = builtin_spec("cyh1")
    assert len(cyh.groups) == 2
    assert all(it.f == 5 for it in cyh.groups[0].items)


def test_cyh1_exceeds_grid_budget():
    bm = builtin_spec("cyh1")
    data = simulate_data(bm, 1)
    with pytest.raises(GridBudgetExceeded):
        fit_builtin(bm, data, EMConfig())


# --- trials and studies -----------------------------------------------------------


def small_spec(**kw):
    base = dict(
        model_name="m2pl5",
        replications=2,
        seed_base=3,
        estimators=("mstep", "agile"),
        ground_truth="none",
    )
    base.update(kw)
    return StudySpec(**base)


def test_run_trial_deterministic():
    spec = small_spec()
    a = run_trial(spec, 0)
    b = run_trial(spec, 0)
    assert np.array_equal(a.theta_hat, b.theta_hat)
    av, bv = a.estimators["agile"].V, b.estimators["agile"].V
    assert np.array_equal(av, bv)


def test_mstep_only_runs_no_probes():
    spec = small_spec(estimators=("mstep",))
    res = run_trial(spec, 0)
    assert set(res.estimators) == {"mstep"}
    assert res.estimators["mstep"].converged


def test_study_accounting():
    spec = small_spec()
    results = run_study(spec)
    summary = summarize_study(results)
    assert summary["n_trials"] == 2
    for name in spec.estimators:
        fails = sum(1 for r in results if not r.estimators[name].converged)
        oks = sum(1 for r in results if r.estimators[name].converged)
        assert fails + oks == spec.replications
        assert summary["failure_pct"][name] == pytest.approx(100.0 * fails / 2)


def test_unidentified_trial_fails_all_estimators():
    spec = small_spec(screen_log_cond=-1.0)  # impossible threshold
    res = run_trial(spec, 0)
    assert not res.identified
    assert all(not e.converged for e in res.estimators.values())
    assert all(e.reason == "unidentified" for e in res.estimators.values())


def test_accuracy_scoring_against_richardson():
    spec = small_spec(estimators=("agile", "richardson"), ground_truth="richardson")
    res = run_trial(spec, 0)
    agile = res.estimators["agile"]
    assert np.isfinite(agile.log_kl)
    assert agile.rd >= 0


# --- CLI ----------------------------------------------------------------------------


def test_cli_usage_error():
    assert cli.main(["se", "multinomial", "--method", "bogus"]) == cli.EXIT_USAGE
    assert cli.main(["noise-curve"]) == cli.EXIT_USAGE


def test_cli_unknown_model(tmp_path):
    assert cli.main(["fit", "not-a-model", "--outdir", str(tmp_path)]) == cli.EXIT_USAGE


def test_cli_se_fixture(tmp_path, capsys):
    code = cli.main(["se", "multinomial", "--method", "agile", "--outdir", str(tmp_path)])
    assert code == cli.EXIT_OK
    text = (tmp_path / "report.txt").read_text()
    assert "status: ok" in text
    est = (tmp_path / "estimates.csv").read_text().splitlines()
    se = float(est[1].split(",")[2])
    assert se == pytest.approx(377.5**-0.5, rel=0.01)
    for name in ("rate_matrix.csv", "observed_info.csv", "covariance.csv", "probes.csv"):
        assert (tmp_path / name).exists()


def test_cli_simulate_fit_roundtrip(tmp_path):
    assert cli.main(["simulate", "m2pl5", "--seed", "9", "--outdir", str(tmp_path)]) == cli.EXIT_OK
    data_file = tmp_path / "data.csv"
    assert data_file.exists()
    code = cli.main(["fit", "m2pl5", "--data", str(data_file), "--outdir", str(tmp_path)])
    assert code == cli.EXIT_OK
    rows = (tmp_path / "estimates.csv").read_text().splitlines()[1:]
    est = {r.split(",")[0]: float(r.split(",")[1]) for r in rows}
    from semprobe.harness import make_model

    bm = builtin_spec("m2pl5")
    meta = make_model(bm, simulate_data(bm, 9), EMConfig()).param_meta()
    gen = dict(zip(meta.names, meta.values))
    # moderate-slope items recover their generating values within MC error
    for name in ("g1.i1.a1", "g1.i2.a1", "g1.i3.a1"):
        assert abs(est[name] - gen[name]) < 0.5


def test_cli_noise_curve_writes_figure(tmp_path):
    code = cli.main(["noise-curve", "multinomial", "--outdir", str(tmp_path)])
    assert code == cli.EXIT_OK
    assert (tmp_path / "noise_curve.png").stat().st_size > 0
    assert (tmp_path / "noise_curve.csv").exists()
    assert (tmp_path / "noise_fit.csv").exists()


def test_cli_target_sweep_writes_figure(tmp_path):
    code = cli.main([
        "target-sweep", "multinomial", "--targets", "-8", "-5.2", "-4",
        "--outdir", str(tmp_path),
    ])
    assert code == cli.EXIT_OK
    assert (tmp_path / "target_sweep.png").stat().st_size > 0
    lines = (tmp_path / "target_sweep.csv").read_text().splitlines()
    assert lines[0] == "ln_target,log_kl,rd_norm,mre,failure"
    assert len(lines) == 4


def test_cli_study(tmp_path):
    study = tmp_path / "study.yaml"
    study.write_text(
        "model: m2pl5\nreplications: 2\nseed_base: 3\n"
        "estimators: [mstep, agile]\nground_truth: none\n"
    )
    code = cli.main(["study", str(study), "--outdir", str(tmp_path)])
    assert code == cli.EXIT_OK
    for name in ("failure.csv", "accuracy.csv", "trials.csv"):
        assert (tmp_path / name).exists()


def test_cli_yaml_model_spec(tmp_path):
    bm = builtin_spec("m2pl5")
    spec_path = tmp_path / "model.yaml"
    iofmt.save_model_spec(spec_path, bm.groups)
    code = cli.main(["fit", str(spec_path), "--seed", "4", "--outdir", str(tmp_path)])
    assert code == cli.EXIT_OK
    assert (tmp_path / "estimates.csv").exists()
