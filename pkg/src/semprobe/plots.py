"""Matplotlib figures rendered alongside the delimited output files.

Rendering uses the Agg backend so the CLI works headless; each function
writes one PNG and returns its path.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_noise_curves(path, curves: dict[str, list[tuple[float, float]]],
                      fits: dict[str, tuple[float, float]] | None = None):
    """Log-log scatter of measured noise intensity nu(u) per parameter,
    with the fitted beta/u**2 model overlaid when fits are provided.

    curves: name -> [(u, nu), ...]; fits: name -> (beta, r_squared).
    """
    fig, ax = plt.subplots(figsize=(7, 5))
    for name, pts in curves.items():
        if not pts:
            continue
        u = np.array([p[0] for p in pts])
        nu = np.array([p[1] for p in pts])
        positive = (u > 0) & (nu > 0)
        line = ax.plot(u[positive], nu[positive], "o", ms=3, alpha=0.6, label=name)[0]
        if fits and name in fits:
            beta = fits[name][0]
            if beta > 0:
                ug = np.geomspace(u[positive].min(), u[positive].max(), 50)
                ax.plot(ug, beta / ug**2, "-", lw=0.8, color=line.get_color())
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("probe offset u")
    ax.set_ylabel("noise intensity nu(u)")
    ax.set_title("Finite-difference noise vs probe offset")
    if len(curves) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_target_sweep(path, rows: list[dict]):
    """Three panels (log KL divergence, relative-difference norm, asymmetry
    MRE) against the log noise target.

    rows: dicts with keys ln_target, log_kl, rd_norm, mre (failed points
    may carry NaNs and are simply not drawn).
    """
    fig, axes = plt.subplots(1, 3, figsize=(12, 4), sharex=True)
    panels = [("log_kl", "log KL divergence"), ("rd_norm", "||RD||_2"), ("mre", "MRE")]
    x = np.array([r["ln_target"] for r in rows])
    for ax, (key, label) in zip(axes, panels):
        y = np.array([r.get(key, np.nan) for r in rows], dtype=float)
        ok = np.isfinite(y)
        ax.plot(x[ok], y[ok], "o-")
        ax.set_xlabel("ln noise target")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    fig.suptitle("Covariance error vs probe-offset noise target")
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
