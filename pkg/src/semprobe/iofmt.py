"""File formats: YAML model and study specs, delimited response data,
delimited tables/matrices, and the standard-error report bundle.

All tabular output is comma-delimited text with a header row; matrices
carry parameter names on both axes.  Response data is one row per
respondent (or unique pattern when a ``freq`` column is present), one
column per item, 0-based outcome codes, empty cell = missing.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np
import yaml

from .errors import UnknownSpec
from .fit import GaussianPrior, IfaGroupSpec
from .items import MISSING, ItemSpec, LatentDist, ResponseData
from .sem import SemReport

# --- model specs ------------------------------------------------------------


def _clean(value):
    """YAML-safe copy: arrays to lists, numpy scalars to python scalars."""
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


def item_to_dict(item: ItemSpec) -> dict:
    out = {
        "kind": item.kind,
        "slopes": _clean(item.slopes),
        "intercepts": _clean(item.intercepts),
        "K": int(item.K),
    }
    if item.has_g:
        out["g"] = float(item.g)
    if item.kind == "nominal":
        out["alpha"] = _clean(item.alpha)
        out["Ta"] = _clean(item.Ta)
        out["Tc"] = _clean(item.Tc)
    if not bool(np.all(item.free)):
        out["free"] = _clean(item.free)
    if any(lab is not None for lab in item.labels):
        out["labels"] = list(item.labels)
    return out


def item_from_dict(d: dict) -> ItemSpec:
    kw = {
        "kind": d["kind"],
        "slopes": d["slopes"],
        "intercepts": d["intercepts"],
        "K": int(d.get("K", 2)),
    }
    if "g" in d and d["g"] is not None:
        kw["g"] = float(d["g"])
    for key in ("alpha", "Ta", "Tc"):
        if key in d and d[key] is not None:
            kw[key] = np.asarray(d[key], dtype=float)
    if "free" in d and d["free"] is not None:
        kw["free"] = np.asarray(d["free"], dtype=bool)
    if "labels" in d and d["labels"] is not None:
        kw["labels"] = list(d["labels"])
    return ItemSpec(**kw)


def latent_to_dict(latent: LatentDist) -> dict:
    out = {"mean": _clean(latent.mean), "var": _clean(latent.var)}
    if bool(np.any(latent.free_mean)):
        out["free_mean"] = _clean(latent.free_mean)
    if bool(np.any(latent.free_var)):
        out["free_var"] = _clean(latent.free_var)
    if any(lab is not None for lab in latent.labels_mean):
        out["labels_mean"] = list(latent.labels_mean)
    if any(lab is not None for lab in latent.labels_var):
        out["labels_var"] = list(latent.labels_var)
    return out


def latent_from_dict(d: dict) -> LatentDist:
    kw = {"mean": np.asarray(d["mean"], dtype=float), "var": np.asarray(d["var"], dtype=float)}
    if d.get("free_mean") is not None:
        kw["free_mean"] = np.asarray(d["free_mean"], dtype=bool)
    if d.get("free_var") is not None:
        kw["free_var"] = np.asarray(d["free_var"], dtype=bool)
    if d.get("labels_mean") is not None:
        kw["labels_mean"] = list(d["labels_mean"])
    if d.get("labels_var") is not None:
        kw["labels_var"] = list(d["labels_var"])
    return LatentDist(**kw)


def group_to_dict(group: IfaGroupSpec) -> dict:
    out = {
        "name": group.name,
        "n": int(group.n),
        "latent": latent_to_dict(group.latent),
        "items": [item_to_dict(it) for it in group.items],
    }
    if group.priors:
        out["priors"] = [
            {"item": p.item, "param": p.param, "mean": float(p.mean), "sd": float(p.sd)}
            for p in group.priors
        ]
    return out


def group_from_dict(d: dict) -> IfaGroupSpec:
    priors = [
        GaussianPrior(item=int(p["item"]), param=int(p["param"]),
                      mean=float(p["mean"]), sd=float(p["sd"]))
        for p in d.get("priors", []) or []
    ]
    return IfaGroupSpec(
        name=str(d.get("name", "group")),
        items=[item_from_dict(it) for it in d["items"]],
        latent=latent_from_dict(d["latent"]),
        n=int(d.get("n", 0)),
        priors=priors,
    )


def save_model_spec(path, groups: list[IfaGroupSpec], quadrature: dict | None = None) -> None:
    doc = {"groups": [group_to_dict(g) for g in groups]}
    if quadrature:
        doc["quadrature"] = dict(quadrature)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


def load_model_spec(path) -> tuple[list[IfaGroupSpec], dict]:
    """Returns (groups, quadrature settings dict, possibly empty)."""
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict) or "groups" not in doc:
        raise UnknownSpec(f"{path}: not a model spec (missing 'groups')")
    groups = [group_from_dict(g) for g in doc["groups"]]
    return groups, dict(doc.get("quadrature") or {})


# --- study specs ------------------------------------------------------------


def load_study_spec(path) -> dict:
    """Raw study-file dict; the CLI maps it onto StudySpec and config objects."""
    doc = yaml.safe_load(Path(path).read_text())
    if not isinstance(doc, dict) or "model" not in doc:
        raise UnknownSpec(f"{path}: not a study spec (missing 'model')")
    return doc


# --- response data ----------------------------------------------------------


def save_response_data(path, data: ResponseData, item_names: list[str] | None = None) -> None:
    n_items = data.patterns.shape[1]
    names = item_names or [f"i{j + 1}" for j in range(n_items)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + ["freq"])
        for pat, freq in zip(data.patterns, data.freq):
            row = ["" if v == MISSING else int(v) for v in pat]
            writer.writerow(row + [int(freq) if float(freq).is_integer() else float(freq)])


def load_response_data(path) -> ResponseData:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        has_freq = bool(header) and header[-1].strip().lower() == "freq"
        n_items = len(header) - (1 if has_freq else 0)
        patterns, freqs = [], []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            cells = row[:n_items]
            patterns.append([MISSING if not c.strip() else int(c) for c in cells])
            freqs.append(float(row[n_items]) if has_freq else 1.0)
    if not patterns:
        return ResponseData(patterns=np.empty((0, n_items), dtype=int), freq=np.empty(0))
    pats = np.asarray(patterns, dtype=int)
    fr = np.asarray(freqs, dtype=float)
    if not has_freq:
        return ResponseData.from_rows(pats)
    # merge duplicate patterns so downstream code sees unique rows
    uniq, inverse = np.unique(pats, axis=0, return_inverse=True)
    merged = np.zeros(uniq.shape[0])
    np.add.at(merged, inverse, fr)
    return ResponseData(patterns=uniq, freq=merged)


# --- delimited tables and matrices ------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float) and math.isnan(v):
        return "nan"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_matrix(path, matrix: np.ndarray, names: list[str]) -> None:
    matrix = np.asarray(matrix, dtype=float)
    rows = [[names[i]] + [repr(float(v)) for v in matrix[i]] for i in range(matrix.shape[0])]
    write_table(path, ["param"] + list(names), rows)


def read_matrix(path) -> tuple[np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[1:]
        rows = [[float(c) for c in row[1:]] for row in reader if row]
    return np.asarray(rows), names


# --- SE report bundle --------------------------------------------------------


def sem_report_text(report: SemReport, names: list[str]) -> str:
    buf = io.StringIO()
    print(f"method: {report.method}", file=buf)
    print(f"status: {'ok' if report.ok else 'failed'}", file=buf)
    if report.failure:
        print(f"failure: {report.failure}", file=buf)
    print(f"elapsed_seconds: {report.elapsed:.6f}", file=buf)
    if report.mre is not None:
        print(f"asymmetry_mre: {report.mre:.6e}", file=buf)
    if report.ok:
        se = report.standard_errors()
        print(file=buf)
        print(f"{'param':<16s}{'estimate_se':>16s}", file=buf)
        for name, s in zip(names, se):
            print(f"{name:<16s}{s:>16.8f}", file=buf)
    return buf.getvalue()


def save_sem_report(outdir, report: SemReport, names: list[str],
                    theta_hat: np.ndarray | None = None) -> list[Path]:
    """Write report.txt plus delimited R, observed_info, V and a probe log.

    Returns the list of files written.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    path = outdir / "report.txt"
    path.write_text(sem_report_text(report, names))
    written.append(path)

    if report.ok and theta_hat is not None:
        path = outdir / "estimates.csv"
        write_table(
            path,
            ["param", "estimate", "se"],
            [[n, float(t), float(s)]
             for n, t, s in zip(names, theta_hat, report.standard_errors())],
        )
        written.append(path)

    if report.rate is not None:
        path = outdir / "rate_matrix.csv"
        write_matrix(path, report.rate.R, names)
        written.append(path)
        path = outdir / "probes.csv"
        rows = []
        for j, name in enumerate(names):
            offs = report.rate.probe_offsets[j]
            beta = report.betas[j] if report.betas is not None else None
            rows.append([
                name,
                int(report.rate.probe_counts[j]),
                bool(report.rate.per_column_converged[j]),
                beta,
                ";".join(repr(float(o)) for o in offs),
            ])
        write_table(path, ["param", "probes", "converged", "beta", "offsets"], rows)
        written.append(path)

    if report.observed_info is not None:
        path = outdir / "observed_info.csv"
        write_matrix(path, report.observed_info, names)
        written.append(path)
    if report.V is not None:
        path = outdir / "covariance.csv"
        write_matrix(path, report.V, names)
        written.append(path)
    return written
