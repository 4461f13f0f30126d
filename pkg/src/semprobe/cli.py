"""Command-line interface.

Subcommands: fit, se, simulate, study, noise-curve, target-sweep.  Model
arguments accept a builtin model name (m2pl5, m3pl15, grm20, cyh1), the
analytic fixture name ``multinomial``, or a path to a YAML model spec.

Exit codes: 0 ok, 1 usage error, 2 fit non-convergence, 3 estimator
failure.  The noise-curve and target-sweep paths render figures next to
their delimited output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import iofmt
from .builtin import BUILTIN_NAMES, BuiltinModel, builtin_spec
from .emcore import EMConfig, run_em
from .errors import SemProbeError
from .fit import IfaModel, build_quadrature
from .harness import (
    StudySpec,
    fit_builtin,
    multinomial_linkage_fixture,
    run_study,
    simulate_data,
    start_vector,
    summarize_study,
)
from .items import sample_responses
from .metrics import condition_log
from .numdiff import RichardsonConfig, richardson_hessian
from .sem import SemConfig, SemReport, fit_noise_model, noise_curve, sem_standard_errors, target_sweep

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FIT_FAILURE = 2
EXIT_ESTIMATOR_FAILURE = 3

SE_METHODS = ("mstep", "mr", "tian", "agile", "richardson")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: _Parser):
    p.add_argument("--outdir", default=".", help="output directory")
    p.add_argument("--rel-tol", type=float, default=1e-11, help="relative log-likelihood tolerance")
    p.add_argument("--max-iter", type=int, default=750)
    p.add_argument("--sem-tol", type=float, default=1e-3, help="SEM probe stability tolerance")
    p.add_argument("--ln-target", type=float, default=-5.2, help="log noise target for the three-probe method")
    p.add_argument("--agile-u1", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--points-per-dim", type=int, default=None, help="quadrature points per latent dimension")
    p.add_argument("--z-lo", type=float, default=None)
    p.add_argument("--z-hi", type=float, default=None)
    p.add_argument("--grid-budget", type=int, default=10**6, help="maximum quadrature grid size")
    p.add_argument("--data", nargs="*", default=None, help="response data file(s), one per group")


def build_parser() -> _Parser:
    parser = _Parser(prog="semprobe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model and report estimates")
    p.add_argument("model")
    _add_common(p)

    p = sub.add_parser("se", help="standard errors by a chosen estimator")
    p.add_argument("model")
    p.add_argument("--method", choices=SE_METHODS, default="agile")
    _add_common(p)

    p = sub.add_parser("simulate", help="draw response data from a model spec")
    p.add_argument("model")
    _add_common(p)

    p = sub.add_parser("study", help="run a simulation study from a study file")
    p.add_argument("study_file")
    _add_common(p)

    p = sub.add_parser("noise-curve", help="measured probe noise vs offset, with figure")
    p.add_argument("model")
    p.add_argument("--params", nargs="*", type=int, default=None, help="parameter indices (default: all)")
    p.add_argument("--u-min", type=float, default=1e-4)
    p.add_argument("--u-max", type=float, default=1e-1)
    p.add_argument("--u-points", type=int, default=10)
    p.add_argument("--w", type=float, default=1e-5, help="probe-pair spacing")
    _add_common(p)

    p = sub.add_parser("target-sweep", help="covariance error vs noise target, with figure")
    p.add_argument("model")
    p.add_argument("--targets", nargs="*", type=float,
                   default=[-8.0, -6.5, -5.2, -4.0], help="ln noise targets")
    _add_common(p)

    return parser


def _em_config(args) -> EMConfig:
    return EMConfig(rel_ll_tolerance=args.rel_tol, max_iterations=args.max_iter)


def _sem_config(args, method="agile") -> SemConfig:
    return SemConfig(
        method=method,
        sem_tolerance=args.sem_tol,
        agile_u1=args.agile_u1,
        ln_noise_target=args.ln_target,
    )


def _load_model(name_or_path: str, args):
    """Resolve a model argument to (model, run-or-None, names, kind).

    kind: "fixture" | "builtin" | "file".  For the fixture no data is
    involved; for builtin/file models the returned model is unfitted.
    """
    if name_or_path == "multinomial":
        return multinomial_linkage_fixture(), "fixture"
    if name_or_path in BUILTIN_NAMES:
        return builtin_spec(name_or_path), "builtin"
    path = Path(name_or_path)
    if not path.exists():
        raise SemProbeError(
            f"unknown model {name_or_path!r}: not a builtin "
            f"({', '.join(BUILTIN_NAMES)}), not 'multinomial', and not a file"
        )
    groups, quad = iofmt.load_model_spec(path)
    f = max(g.latent.f for g in groups)
    ppd = args.points_per_dim or quad.get("points_per_dim") or (49 if f == 1 else 21)
    z_lo = args.z_lo if args.z_lo is not None else quad.get("z_lo", -6.0 if f == 1 else -5.0)
    z_hi = args.z_hi if args.z_hi is not None else quad.get("z_hi", 6.0 if f == 1 else 5.0)
    bm = BuiltinModel(
        name=path.stem, groups=groups, points_per_dim=int(ppd),
        z_lo=float(z_lo), z_hi=float(z_hi), screen_log_cond=float("inf"),
    )
    return bm, "file"


def _apply_quadrature_overrides(bm: BuiltinModel, args) -> BuiltinModel:
    if args.points_per_dim is not None:
        bm.points_per_dim = args.points_per_dim
    if args.z_lo is not None:
        bm.z_lo = args.z_lo
    if args.z_hi is not None:
        bm.z_hi = args.z_hi
    return bm


def _get_data(bm: BuiltinModel, args):
    if args.data:
        if len(args.data) != len(bm.groups):
            raise SemProbeError(
                f"model has {len(bm.groups)} group(s) but {len(args.data)} data file(s) given"
            )
        return [iofmt.load_response_data(p) for p in args.data]
    return simulate_data(bm, args.seed)


def _fit(bm: BuiltinModel, args):
    data = _get_data(bm, args)
    model, run = fit_builtin(bm, data, _em_config(args), args.grid_budget)
    return model, run


def _fit_summary_lines(model, run) -> list[str]:
    info = model.complete_info(run.theta_hat)
    return [
        f"converged: {run.converged}",
        f"iterations: {run.iterations}",
        f"log_likelihood: {model.observed_ll(run.theta_hat):.8f}",
        f"condition_log: {condition_log(info):.4f}",
    ]


def _write_estimates(outdir: Path, names, theta, se=None):
    if se is None:
        rows = [[n, float(v)] for n, v in zip(names, theta)]
        iofmt.write_table(outdir / "estimates.csv", ["param", "estimate"], rows)
    else:
        rows = [[n, float(v), float(s)] for n, v, s in zip(names, theta, se)]
        iofmt.write_table(outdir / "estimates.csv", ["param", "estimate", "se"], rows)


def cmd_fit(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    obj, kind = _load_model(args.model, args)
    if kind == "fixture":
        model = obj
        run = run_em(model, np.array([0.5]), _em_config(args))
    else:
        model, run = _fit(obj, args)
    names = model.param_meta().names
    (outdir / "fit.txt").write_text("\n".join(_fit_summary_lines(model, run)) + "\n")
    _write_estimates(outdir, names, run.theta_hat)
    if not run.converged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_FIT_FAILURE
    print(f"converged in {run.iterations} iterations; wrote {outdir / 'estimates.csv'}")
    return EXIT_OK


def _se_report(model, run, method, args):
    """SemReport for any estimator name, wrapping the non-SEM ones."""
    theta = run.theta_hat
    if method in ("mr", "tian", "agile"):
        return sem_standard_errors(model, theta, method, _sem_config(args, method), run=run)
    if method == "mstep":
        info = model.complete_info(theta)
    else:
        info = -richardson_hessian(model.observed_ll, theta, RichardsonConfig())
    try:
        v = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return SemReport(method=method, observed_info=info, V=None, mre=None,
                         betas=None, rate=None, elapsed=0.0,
                         failure={"column": None, "reason": "singular information matrix"})
    return SemReport(method=method, observed_info=info, V=(v + v.T) / 2.0, mre=None,
                     betas=None, rate=None, elapsed=0.0, failure=None)


def cmd_se(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    obj, kind = _load_model(args.model, args)
    if kind == "fixture":
        model = obj
        run = run_em(model, np.array([0.5]), _em_config(args))
    else:
        model, run = _fit(obj, args)
    if not run.converged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_FIT_FAILURE
    names = model.param_meta().names
    report = _se_report(model, run, args.method, args)
    iofmt.save_sem_report(outdir, report, names, theta_hat=run.theta_hat)
    if not report.ok:
        print(f"estimator failed: {report.failure}", file=sys.stderr)
        return EXIT_ESTIMATOR_FAILURE
    print(f"wrote SE report to {outdir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    obj, kind = _load_model(args.model, args)
    if kind == "fixture":
        print("the multinomial fixture has fixed data; nothing to simulate", file=sys.stderr)
        return EXIT_USAGE
    bm = obj
    for gi, g in enumerate(bm.groups):
        data = sample_responses(g.items, g.latent, g.n, (args.seed, gi))
        suffix = f"_{g.name}" if len(bm.groups) > 1 else ""
        path = outdir / f"data{suffix}.csv"
        iofmt.save_response_data(path, data)
        print(f"wrote {path} ({int(data.n)} respondents, {data.patterns.shape[0]} patterns)")
    return EXIT_OK


def cmd_study(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    doc = iofmt.load_study_spec(args.study_file)
    tol = doc.get("tolerances") or {}
    em = EMConfig(
        rel_ll_tolerance=float(tol.get("rel_ll_tolerance", args.rel_tol)),
        max_iterations=int(tol.get("max_iterations", args.max_iter)),
    )
    sem = SemConfig(
        sem_tolerance=float(tol.get("sem_tolerance", args.sem_tol)),
        agile_u1=float(tol.get("agile_u1", args.agile_u1)),
        ln_noise_target=float(tol.get("ln_noise_target", args.ln_target)),
    )
    spec = StudySpec(
        model_name=str(doc["model"]),
        replications=int(doc.get("replications", 20)),
        seed_base=int(doc.get("seed_base", args.seed)),
        estimators=tuple(doc.get("estimators", ["mstep", "mr", "tian", "agile", "richardson"])),
        em_config=em,
        sem_config=sem,
        screen_log_cond=doc.get("screening"),
        ground_truth=str(doc.get("ground_truth", "richardson")),
        grid_budget=int(doc.get("grid_budget", args.grid_budget)),
    )
    results = run_study(
        spec, progress=lambda done, total: print(f"trial {done}/{total}", file=sys.stderr)
    )
    summary = summarize_study(results)
    names = list(results[0].estimators.keys())
    iofmt.write_table(
        outdir / "failure.csv",
        ["estimator", "failure_pct"],
        [[n, summary["failure_pct"][n]] for n in names],
    )
    iofmt.write_table(
        outdir / "accuracy.csv",
        ["estimator", "mean_seconds", "mean_log_kl", "mean_rd_norm"],
        [[n, summary["mean_seconds"][n], summary["mean_log_kl"][n], summary["mean_rd_norm"][n]]
         for n in names],
    )
    trial_rows = []
    for r in results:
        for n, est in r.estimators.items():
            trial_rows.append([
                r.trial, n, r.identified, est.converged,
                est.elapsed, est.log_kl, est.rd, est.reason or "",
            ])
    iofmt.write_table(
        outdir / "trials.csv",
        ["trial", "estimator", "identified", "converged", "seconds", "log_kl", "rd_norm", "reason"],
        trial_rows,
    )
    print(f"wrote {outdir / 'failure.csv'}, {outdir / 'accuracy.csv'}, {outdir / 'trials.csv'}")
    return EXIT_OK


def cmd_noise_curve(args) -> int:
    from . import plots

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    obj, kind = _load_model(args.model, args)
    if kind == "fixture":
        model = obj
        run = run_em(model, np.array([0.5]), _em_config(args))
    else:
        model, run = _fit(obj, args)
    if not run.converged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_FIT_FAILURE
    names = model.param_meta().names
    idx = args.params if args.params else range(len(names))
    u_grid = np.geomspace(args.u_min, args.u_max, args.u_points)
    curves, fits, rows, fit_rows = {}, {}, [], []
    for j in idx:
        pts = noise_curve(model, run.theta_hat, j, u_grid, w=args.w)
        curves[names[j]] = pts
        rows += [[names[j], u, nu] for u, nu in pts]
        try:
            beta, r2 = fit_noise_model(pts)
            fits[names[j]] = (beta, r2)
            fit_rows.append([names[j], beta, r2])
        except (ValueError, SemProbeError) as exc:
            fit_rows.append([names[j], float("nan"), float("nan")])
            print(f"noise fit failed for {names[j]}: {exc}", file=sys.stderr)
    iofmt.write_table(outdir / "noise_curve.csv", ["param", "u", "nu"], rows)
    iofmt.write_table(outdir / "noise_fit.csv", ["param", "beta", "r_squared"], fit_rows)
    fig = plots.plot_noise_curves(outdir / "noise_curve.png", curves, fits)
    print(f"wrote {outdir / 'noise_curve.csv'}, {outdir / 'noise_fit.csv'}, {fig}")
    return EXIT_OK


def cmd_target_sweep(args) -> int:
    from . import plots

    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    obj, kind = _load_model(args.model, args)
    if kind == "fixture":
        model = obj
        run = run_em(model, np.array([0.5]), _em_config(args))
    else:
        model, run = _fit(obj, args)
    if not run.converged:
        print("fit did not converge", file=sys.stderr)
        return EXIT_FIT_FAILURE
    truth = np.linalg.inv(-richardson_hessian(model.observed_ll, run.theta_hat, RichardsonConfig()))
    truth = (truth + truth.T) / 2.0
    rows = target_sweep(model, run.theta_hat, np.asarray(args.targets), truth,
                        config=_sem_config(args))
    iofmt.write_table(
        outdir / "target_sweep.csv",
        ["ln_target", "log_kl", "rd_norm", "mre", "failure"],
        [[r["ln_target"], r["log_kl"], r["rd_norm"], r["mre"],
          "" if r["failure"] is None else str(r["failure"])] for r in rows],
    )
    fig = plots.plot_target_sweep(outdir / "target_sweep.png", rows)
    print(f"wrote {outdir / 'target_sweep.csv'}, {fig}")
    if all(r["failure"] is not None for r in rows):
        print("every target failed", file=sys.stderr)
        return EXIT_ESTIMATOR_FAILURE
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "se": cmd_se,
    "simulate": cmd_simulate,
    "study": cmd_study,
    "noise-curve": cmd_noise_curve,
    "target-sweep": cmd_target_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except SemProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR_FAILURE if args.command in ("se", "noise-curve", "target-sweep") else EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
