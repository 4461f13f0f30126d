"""Precision and diagnosability measures for covariance estimates."""

from __future__ import annotations

import numpy as np

from .errors import NotPositiveDefinite, TooFewTrials, ZeroTruth


def is_positive_definite(m: np.ndarray, rel_tol: float = 1e-12) -> bool:
    """Symmetric factorization test with a zero-pivot tolerance scaled to
    the largest diagonal entry."""
    m = np.asarray(m, dtype=float)
    diag_max = float(np.abs(np.diag(m)).max()) if m.size else 0.0
    shift = rel_tol * diag_max
    try:
        np.linalg.cholesky(m - shift * np.eye(m.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return False


def kl_divergence(sigma_true: np.ndarray, sigma: np.ndarray) -> float:
    """KL divergence between zero-mean Gaussians with the given covariances."""
    st = np.asarray(sigma_true, dtype=float)
    s = np.asarray(sigma, dtype=float)
    k = st.shape[0]
    if st.shape != s.shape or st.shape != (k, k):
        raise ValueError("covariance shapes must match and be square")
    if not (is_positive_definite(st) and is_positive_definite(s)):
        raise NotPositiveDefinite("KL divergence needs positive definite inputs")
    sign_t, logdet_t = np.linalg.slogdet(st)
    sign_s, logdet_s = np.linalg.slogdet(s)
    tr = float(np.trace(np.linalg.solve(s, st)))
    return 0.5 * (tr - k - (logdet_t - logdet_s))


def rd_norm(se: np.ndarray, se_true: np.ndarray) -> float:
    """l2 norm of elementwise relative differences of standard errors."""
    se = np.asarray(se, dtype=float)
    se_true = np.asarray(se_true, dtype=float)
    if np.any(se_true <= 0):
        raise ZeroTruth("reference standard errors must be positive")
    return float(np.linalg.norm((se - se_true) / se_true))


def mre(v: np.ndarray) -> float:
    """Spectral norm of the whitened asymmetric part of a square matrix.

    Quantifies the pure numerical error carried by the asymmetry of a
    covariance estimate before it is symmetrized.
    """
    v = np.asarray(v, dtype=float)
    c = (v + v.T) / 2.0
    k = (v - v.T) / 2.0
    w, q = np.linalg.eigh(c)
    if np.any(w <= 0):
        raise NotPositiveDefinite("symmetric part is not positive definite")
    c_inv_half = q @ np.diag(w**-0.5) @ q.T
    return float(np.linalg.norm(c_inv_half @ k @ c_inv_half, 2))


def condition_log(m: np.ndarray) -> float:
    """log of (max singular value / min singular value)."""
    m = np.asarray(m, dtype=float)
    if not np.any(m):
        raise ValueError("matrix is zero")
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] == 0:
        return float("inf")
    return float(np.log(sv[0] / sv[-1]))


def mc_ground_truth(
    trial_mles: np.ndarray, generating: np.ndarray
) -> tuple[np.ndarray, float, float]:
    """Sample covariance of trial MLEs plus bias summaries.

    bias is the generating value minus the mean estimate (sign convention
    is immaterial for the reported magnitude summaries).
    """
    trial_mles = np.atleast_2d(np.asarray(trial_mles, dtype=float))
    if trial_mles.shape[0] < 2:
        raise TooFewTrials("need at least two trials")
    v_true = np.cov(trial_mles, rowvar=False)
    v_true = np.atleast_2d(v_true)
    bias = np.asarray(generating, dtype=float) - trial_mles.mean(axis=0)
    return v_true, float(np.abs(bias).max()), float(np.linalg.norm(bias))


def mad_outlier_mask(x: np.ndarray, units: float = 10.0) -> np.ndarray:
    """True where x is within `units` median-absolute-deviations of the median."""
    x = np.asarray(x, dtype=float)
    med = np.median(x)
    mad = np.median(np.abs(x - med))
    if mad == 0:
        return np.ones_like(x, dtype=bool)
    return np.abs(x - med) <= units * mad
