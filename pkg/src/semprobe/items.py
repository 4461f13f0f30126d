"""Item response-probability functions, analytic derivatives, and sampling.

Three item kinds are supported: dichotomous (2PL/3PL with a logit-scale
lower asymptote), graded (ordinal, strictly ordered intercepts), and
nominal (per-category slopes/intercepts built from fixed transform
matrices, normalized logistic terms).

All probability functions clamp the logit argument to |l| <= MAX_LOGIT so
the response surface is flat (derivative zero) beyond that range.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import OrderingViolation

MAX_LOGIT = 35.0

DICHOTOMOUS = "dichotomous"
GRADED = "graded"
NOMINAL = "nominal"


def logistic_clamped(l):
    """1/(1+exp(-l)) with the logit clamped to +/- MAX_LOGIT."""
    z = np.clip(l, -MAX_LOGIT, MAX_LOGIT)
    return 1.0 / (1.0 + np.exp(-z))


def _active(l):
    """Derivative mask: the clamped logistic is flat beyond the clamp."""
    return (np.abs(l) < MAX_LOGIT).astype(float)


@dataclass
class ItemSpec:
    """One item: kind, parameters, free-parameter masks, equality labels.

    Parameter layout (the "natural" vector, in order):
      dichotomous: slopes (f), intercept c, then g when g > -inf
      graded:      slopes (f), intercepts c_1..c_{K-1} (strictly decreasing)
      nominal:     slopes (f), alpha_1..alpha_{K-1}, gamma_1..gamma_{K-1}
    """

    kind: str
    slopes: np.ndarray
    intercepts: np.ndarray  # c for dichotomous/graded, gamma for nominal
    K: int = 2
    g: float = -np.inf  # logit units; -inf encodes 2PL
    alpha: np.ndarray | None = None  # nominal only
    Ta: np.ndarray | None = None  # (K-1, K-1), nominal only
    Tc: np.ndarray | None = None
    free: np.ndarray | None = None  # bool mask over the natural vector
    labels: list[str | None] | None = None  # equality labels per natural entry

    def __post_init__(self):
        self.slopes = np.atleast_1d(np.asarray(self.slopes, dtype=float))
        self.intercepts = np.atleast_1d(np.asarray(self.intercepts, dtype=float))
        if self.kind == GRADED:
            if self.intercepts.size != self.K - 1:
                raise ValueError("graded item needs K-1 intercepts")
            if np.any(np.diff(self.intercepts) >= 0):
                raise OrderingViolation("graded intercepts must strictly decrease")
        elif self.kind == DICHOTOMOUS:
            self.K = 2
            if self.intercepts.size != 1:
                raise ValueError("dichotomous item has a scalar intercept")
        elif self.kind == NOMINAL:
            if self.Ta is None:
                self.Ta = np.eye(self.K - 1)
            if self.Tc is None:
                self.Tc = np.eye(self.K - 1)
            if self.alpha is None:
                raise ValueError("nominal item needs alpha")
            self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        else:
            raise ValueError(f"unknown item kind {self.kind!r}")
        if self.free is None:
            self.free = np.ones(self.n_params, dtype=bool)
        self.free = np.asarray(self.free, dtype=bool)
        if self.free.size != self.n_params:
            raise ValueError("free mask length mismatch")
        if self.labels is None:
            self.labels = [None] * self.n_params

    @property
    def f(self) -> int:
        return self.slopes.size

    @property
    def has_g(self) -> bool:
        return self.kind == DICHOTOMOUS and np.isfinite(self.g)

    @property
    def n_params(self) -> int:
        if self.kind == DICHOTOMOUS:
            return self.f + 1 + (1 if self.has_g else 0)
        if self.kind == GRADED:
            return self.f + self.K - 1
        return self.f + 2 * (self.K - 1)

    def natural(self) -> np.ndarray:
        if self.kind == DICHOTOMOUS:
            parts = [self.slopes, self.intercepts]
            if self.has_g:
                parts.append([self.g])
            return np.concatenate([np.atleast_1d(p) for p in parts])
        if self.kind == GRADED:
            return np.concatenate([self.slopes, self.intercepts])
        return np.concatenate([self.slopes, self.alpha, self.intercepts])

    def param_names(self, prefix: str = "") -> list[str]:
        f = self.f
        if self.kind == DICHOTOMOUS:
            names = [f"{prefix}a{i + 1}" for i in range(f)] + [f"{prefix}c"]
            if self.has_g:
                names.append(f"{prefix}g")
            return names
        if self.kind == GRADED:
            return [f"{prefix}a{i + 1}" for i in range(f)] + [
                f"{prefix}c{k + 1}" for k in range(self.K - 1)
            ]
        return (
            [f"{prefix}s{i + 1}" for i in range(f)]
            + [f"{prefix}alpha{k + 1}" for k in range(self.K - 1)]
            + [f"{prefix}gamma{k + 1}" for k in range(self.K - 1)]
        )


# --- probability functions -------------------------------------------------


def prob_dichotomous(a, c, g, tau):
    """(P0, P1) for the dichotomous model; g in logit units, -inf for 2PL."""
    z = np.dot(np.atleast_1d(a), np.atleast_1d(tau)) + c
    G = 0.0 if g == -np.inf else logistic_clamped(g)
    p1 = G + (1.0 - G) * logistic_clamped(z)
    return 1.0 - p1, p1


def prob_graded(a, c, tau):
    """Category probabilities for the graded model (c strictly decreasing)."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    z = np.dot(np.atleast_1d(a), np.atleast_1d(tau))
    bounds = logistic_clamped(z + c)
    full = np.concatenate([[1.0], bounds, [0.0]])
    p = full[:-1] - full[1:]
    if np.any(p < 0):
        raise OrderingViolation("graded intercepts produce negative probability")
    return p


def prob_nominal(s, alpha, gamma, Ta, Tc, tau):
    """Category probabilities for the nominal model (normalized logistic terms)."""
    a = np.concatenate([[0.0], np.asarray(Ta) @ np.atleast_1d(alpha)])
    c = np.concatenate([[0.0], np.asarray(Tc) @ np.atleast_1d(gamma)])
    eta = np.dot(np.atleast_1d(s), np.atleast_1d(tau))
    terms = logistic_clamped(eta * a + c)
    return terms / terms.sum()


def item_probs(item: ItemSpec, nat: np.ndarray, tau_grid: np.ndarray) -> np.ndarray:
    """(n, K) probability table over rows of tau_grid at natural vector nat."""
    tau_grid = np.atleast_2d(tau_grid)
    f = item.f
    if item.kind == DICHOTOMOUS:
        a, c = nat[:f], nat[f]
        g = nat[f + 1] if item.has_g else -np.inf
        z = tau_grid @ a + c
        G = 0.0 if g == -np.inf else logistic_clamped(g)
        p1 = G + (1.0 - G) * logistic_clamped(z)
        return np.column_stack([1.0 - p1, p1])
    if item.kind == GRADED:
        a, c = nat[:f], nat[f:]
        z = tau_grid @ a
        bounds = logistic_clamped(z[:, None] + c[None, :])
        full = np.hstack(
            [np.ones((z.size, 1)), bounds, np.zeros((z.size, 1))]
        )
        p = full[:, :-1] - full[:, 1:]
        if np.any(p < 0):
            raise OrderingViolation("graded intercepts produce negative probability")
        return p
    # nominal
    K = item.K
    s = nat[:f]
    alpha = nat[f : f + K - 1]
    gamma = nat[f + K - 1 :]
    a = np.concatenate([[0.0], item.Ta @ alpha])
    c = np.concatenate([[0.0], item.Tc @ gamma])
    eta = tau_grid @ s
    terms = logistic_clamped(eta[:, None] * a[None, :] + c[None, :])
    return terms / terms.sum(axis=1, keepdims=True)


# --- analytic derivatives ---------------------------------------------------


def item_logprob_derivs(
    item: ItemSpec, nat: np.ndarray, tau_grid: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """P (n,K), gradient (n,K,p) and Hessian (n,K,p,p) of log P_k.

    Derivatives are with respect to the full natural parameter vector;
    callers mask down to free entries.
    """
    tau_grid = np.atleast_2d(tau_grid)
    n = tau_grid.shape[0]
    f, K, p = item.f, item.K, item.n_params

    if item.kind == DICHOTOMOUS:
        a, c = nat[:f], nat[f]
        z = tau_grid @ a + c
        L = logistic_clamped(z)
        Lp = L * (1.0 - L) * _active(z)
        Lpp = Lp * (1.0 - 2.0 * L)
        vz = np.hstack([tau_grid, np.ones((n, 1))])  # d z / d (a, c)
        if item.has_g:
            g = nat[f + 1]
            G = logistic_clamped(g)
            Gp = G * (1.0 - G) * _active(g)
            Gpp = Gp * (1.0 - 2.0 * G)
            vz = np.hstack([vz, np.zeros((n, 1))])
        else:
            G, Gp, Gpp = 0.0, 0.0, 0.0
        p1 = G + (1.0 - G) * L
        P = np.column_stack([1.0 - p1, p1])
        # dP1 and d2P1 in (z, g) coordinates, then push through the linear maps
        dP1 = (1.0 - G) * Lp  # wrt z
        d2P1_zz = (1.0 - G) * Lpp
        gradP1 = dP1[:, None] * vz
        hessP1 = d2P1_zz[:, None, None] * vz[:, :, None] * vz[:, None, :]
        if item.has_g:
            vg = np.zeros((n, p))
            vg[:, -1] = 1.0
            dP1g = Gp * (1.0 - L)  # wrt g
            d2P1_zg = -Gp * Lp
            d2P1_gg = Gpp * (1.0 - L)
            gradP1 = gradP1 + dP1g[:, None] * vg
            hessP1 = (
                hessP1
                + d2P1_zg[:, None, None]
                * (vz[:, :, None] * vg[:, None, :] + vg[:, :, None] * vz[:, None, :])
                + d2P1_gg[:, None, None] * vg[:, :, None] * vg[:, None, :]
            )
        gradP = np.stack([-gradP1, gradP1], axis=1)
        hessP = np.stack([-hessP1, hessP1], axis=1)
    elif item.kind == GRADED:
        a, c = nat[:f], nat[f:]
        z = tau_grid @ a
        l = z[:, None] + c[None, :]  # (n, K-1)
        B = logistic_clamped(l)
        Bp = B * (1.0 - B) * _active(l)
        Bpp = Bp * (1.0 - 2.0 * B)
        full = np.hstack([np.ones((n, 1)), B, np.zeros((n, 1))])
        P = full[:, :-1] - full[:, 1:]
        # v_j: gradient of boundary logit l_j, j=1..K-1 -> (n, K-1, p)
        V = np.zeros((n, K - 1, p))
        V[:, :, :f] = tau_grid[:, None, :]
        for j in range(K - 1):
            V[:, j, f + j] = 1.0
        dB = Bp[:, :, None] * V  # (n, K-1, p)
        d2B = Bpp[:, :, None, None] * V[:, :, :, None] * V[:, :, None, :]
        zpad_g = np.zeros((n, 1, p))
        zpad_h = np.zeros((n, 1, p, p))
        dfull = np.concatenate([zpad_g, dB, zpad_g], axis=1)
        hfull = np.concatenate([zpad_h, d2B, zpad_h], axis=1)
        gradP = dfull[:, :-1] - dfull[:, 1:]
        hessP = hfull[:, :-1] - hfull[:, 1:]
    else:  # nominal
        s = nat[:f]
        alpha = nat[f : f + K - 1]
        gamma = nat[f + K - 1 :]
        a = np.concatenate([[0.0], item.Ta @ alpha])
        c = np.concatenate([[0.0], item.Tc @ gamma])
        eta = tau_grid @ s  # (n,)
        l = eta[:, None] * a[None, :] + c[None, :]  # (n, K)
        T = logistic_clamped(l)
        Tp = T * (1.0 - T) * _active(l)
        Tpp = Tp * (1.0 - 2.0 * T)
        # gradient of l_k: (n, K, p)
        V = np.zeros((n, K, p))
        V[:, :, :f] = a[None, :, None] * tau_grid[:, None, :]
        Ta_full = np.vstack([np.zeros(K - 1), item.Ta])  # (K, K-1)
        Tc_full = np.vstack([np.zeros(K - 1), item.Tc])
        V[:, :, f : f + K - 1] = eta[:, None, None] * Ta_full[None, :, :]
        V[:, :, f + K - 1 :] = Tc_full[None, :, :]
        # second derivative of l_k: only s x alpha cross terms
        H_l = np.zeros((n, K, p, p))
        cross = tau_grid[:, None, :, None] * Ta_full[None, :, None, :]  # (n,K,f,K-1)
        H_l[:, :, :f, f : f + K - 1] = cross
        H_l[:, :, f : f + K - 1, :f] = np.swapaxes(cross, 2, 3)
        dT = Tp[:, :, None] * V
        d2T = Tpp[:, :, None, None] * V[:, :, :, None] * V[:, :, None, :] + Tp[
            :, :, None, None
        ] * H_l
        S = T.sum(axis=1)  # (n,)
        P = T / S[:, None]
        dS = dT.sum(axis=1)  # (n, p)
        d2S = d2T.sum(axis=1)  # (n, p, p)
        gk = dT / T[:, :, None]
        gS = dS / S[:, None]
        grad_log = gk - gS[:, None, :]
        hess_log = (
            d2T / T[:, :, None, None]
            - gk[:, :, :, None] * gk[:, :, None, :]
            - (d2S / S[:, None, None] - gS[:, :, None] * gS[:, None, :])[:, None]
        )
        return P, grad_log, hess_log

    # zero-probability categories carry zero expected counts downstream, so
    # their (undefined) log-derivatives are set to zero instead of nan
    safe = np.where(P > 0.0, P, 1.0)
    grad_log = np.where(P[:, :, None] > 0.0, gradP / safe[:, :, None], 0.0)
    hess_log = np.where(
        P[:, :, None, None] > 0.0,
        hessP / safe[:, :, None, None]
        - grad_log[:, :, :, None] * grad_log[:, :, None, :],
        0.0,
    )
    return P, grad_log, hess_log


def item_deriv(item: ItemSpec, tau, outcome: int):
    """Gradient and Hessian of log P_outcome w.r.t. the item's free parameters."""
    nat = item.natural()
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    P, G, H = item_logprob_derivs(item, nat, tau[None, :])
    if P[0, outcome] <= 0:
        raise ValueError("log-probability derivative at a zero-probability outcome")
    mask = item.free
    return G[0, outcome][mask], H[0, outcome][np.ix_(mask, mask)]


# --- latent distribution and data ------------------------------------------


@dataclass
class LatentDist:
    """Diagonal-covariance Gaussian latent distribution."""

    mean: np.ndarray
    var: np.ndarray
    free_mean: np.ndarray | None = None
    free_var: np.ndarray | None = None
    labels_mean: list[str | None] | None = None
    labels_var: list[str | None] | None = None

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.var = np.atleast_1d(np.asarray(self.var, dtype=float))
        if np.any(self.var <= 0):
            raise ValueError("latent variances must be positive")
        f = self.mean.size
        if self.free_mean is None:
            self.free_mean = np.zeros(f, dtype=bool)
        if self.free_var is None:
            self.free_var = np.zeros(f, dtype=bool)
        self.free_mean = np.asarray(self.free_mean, dtype=bool)
        self.free_var = np.asarray(self.free_var, dtype=bool)
        if self.labels_mean is None:
            self.labels_mean = [None] * f
        if self.labels_var is None:
            self.labels_var = [None] * f

    @property
    def f(self) -> int:
        return self.mean.size


MISSING = -1


@dataclass
class ResponseData:
    """Unique response patterns with frequencies; entry MISSING marks a skip."""

    patterns: np.ndarray  # (n_patterns, n_items) int
    freq: np.ndarray  # (n_patterns,) positive

    def __post_init__(self):
        self.patterns = np.atleast_2d(np.asarray(self.patterns, dtype=int))
        self.freq = np.atleast_1d(np.asarray(self.freq, dtype=float))
        if self.patterns.shape[0] != self.freq.size:
            raise ValueError("pattern/freq length mismatch")
        if self.freq.size and np.any(self.freq <= 0):
            raise ValueError("frequencies must be positive")

    @property
    def n(self) -> float:
        return float(self.freq.sum())

    @classmethod
    def from_rows(cls, rows: np.ndarray) -> "ResponseData":
        """Compress raw respondent rows into unique patterns with counts."""
        rows = np.atleast_2d(np.asarray(rows, dtype=int))
        if rows.shape[0] == 0:
            return cls(patterns=np.empty((0, rows.shape[1]), dtype=int), freq=np.empty(0))
        uniq, counts = np.unique(rows, axis=0, return_counts=True)
        return cls(patterns=uniq, freq=counts.astype(float))


def sample_responses(items: list[ItemSpec], latent: LatentDist, n: int, seed) -> ResponseData:
    """Draw n respondents; one RNG stream per respondent index.

    Streams are derived from (seed, respondent index) so the draw is
    reproducible regardless of how respondents might be scheduled.
    """
    n_items = len(items)
    if n == 0:
        return ResponseData(patterns=np.empty((0, n_items), dtype=int), freq=np.empty(0))
    nats = [it.natural() for it in items]
    rows = np.empty((n, n_items), dtype=int)
    sd = np.sqrt(latent.var)
    key = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    for r in range(n):
        rng = np.random.default_rng(key + [r])
        tau = latent.mean + sd * rng.standard_normal(latent.f)
        u = rng.random(n_items)
        for i, it in enumerate(items):
            pr = item_probs(it, nats[i], tau[None, :])[0]
            rows[r, i] = int(np.searchsorted(np.cumsum(pr), u[i]))
    rows = np.clip(rows, 0, [it.K - 1 for it in items])
    return ResponseData.from_rows(rows)
