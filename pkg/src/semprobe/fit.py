"""Marginal maximum likelihood for item factor models as an EM map.

The E-step integrates the latent trait over a fixed equal-interval
tensor-product quadrature grid; the M-step runs Newton iterations on the
expected complete-data log-likelihood jointly over all free item-parameter
slots (so equality constraints across items and groups are solved exactly),
followed by closed-form latent moment updates.

The resulting model object satisfies the EMModel protocol from emcore and
is safe to probe: cycle() is a pure function of the free parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .emcore import EMConfig
from .errors import (
    GridBudgetExceeded,
    MStepDivergence,
    NonFinitePattern,
    OrderingViolation,
)
from .items import (
    DICHOTOMOUS,
    GRADED,
    MISSING,
    ItemSpec,
    LatentDist,
    ResponseData,
    item_logprob_derivs,
    item_probs,
)
from .params import ParamVector

DEFAULT_GRID_BUDGET = 10**6
_VAR_FLOOR = 1e-6
_LOG_FLOOR = 1e-300


@dataclass
class GaussianPrior:
    """Gaussian penalty on one natural item parameter."""

    item: int  # item index within the group
    param: int  # index into the item's natural vector
    mean: float
    sd: float


@dataclass
class IfaGroupSpec:
    name: str
    items: list[ItemSpec]
    latent: LatentDist
    n: int  # generating sample size
    priors: list[GaussianPrior] = field(default_factory=list)


@dataclass
class Quadrature:
    points: np.ndarray  # (q, f) node coordinates
    base_weights: np.ndarray  # standard-Normal weights, renormalized
    points_per_dim: int
    z_lo: float
    z_hi: float

    @property
    def q(self) -> int:
        return self.points.shape[0]


def build_quadrature(
    f: int,
    points_per_dim: int = 49,
    z_lo: float = -6.0,
    z_hi: float = 6.0,
    budget: int = DEFAULT_GRID_BUDGET,
) -> Quadrature:
    """Equal-interval tensor-product grid with renormalized Normal weights."""
    if points_per_dim < 3:
        raise ValueError("need at least 3 points per dimension")
    if z_lo >= z_hi:
        raise ValueError("z_lo must be below z_hi")
    if points_per_dim**f > budget:
        raise GridBudgetExceeded(
            f"{points_per_dim}^{f} nodes exceed the grid budget of {budget}"
        )
    axis = np.linspace(z_lo, z_hi, points_per_dim)
    grids = np.meshgrid(*([axis] * f), indexing="ij")
    points = np.column_stack([g.ravel() for g in grids])
    logw = -0.5 * (points**2).sum(axis=1)
    w = np.exp(logw - logw.max())
    return Quadrature(
        points=points,
        base_weights=w / w.sum(),
        points_per_dim=points_per_dim,
        z_lo=z_lo,
        z_hi=z_hi,
    )


@dataclass
class GroupTables:
    nbar: np.ndarray  # (q,) expected respondent mass per node
    rbar: list[np.ndarray]  # per item (q, K) expected response counts


@dataclass
class EStepTables:
    groups: list[GroupTables]
    data_ll: float
    prior_ll: float

    @property
    def penalized_ll(self) -> float:
        return self.data_ll + self.prior_ll


class _ItemCache:
    """Tiny per-item memo of (log-prob table, pattern contribution)."""

    def __init__(self, cap: int = 4):
        self.cap = cap
        self.store: dict[bytes, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, key: bytes):
        return self.store.get(key)

    def put(self, key: bytes, value):
        if len(self.store) >= self.cap:
            self.store.pop(next(iter(self.store)))
        self.store[key] = value


class IfaModel:
    """Bock-Aitkin EM for a multigroup item factor model.

    theta is the free parameter vector; the mapping from free slots to
    per-item natural parameters (including equality constraints) is fixed
    at construction.
    """

    def __init__(
        self,
        groups: list[IfaGroupSpec],
        data: list[ResponseData],
        quad: Quadrature | list[Quadrature],
        config: EMConfig | None = None,
    ):
        if len(groups) != len(data):
            raise ValueError("one ResponseData per group required")
        self.groups = groups
        self.data = data
        self.quads = quad if isinstance(quad, list) else [quad] * len(groups)
        self.config = config or EMConfig()
        self._flatten()
        self._prepare_data()
        self._item_caches = [
            [_ItemCache() for _ in g.items] for g in self.groups
        ]
        self._estep_cache: dict[bytes, EStepTables] = {}

    # --- flattening ---------------------------------------------------------

    def _flatten(self):
        slot_of_label: dict[str, int] = {}
        names: list[str] = []
        kinds: list[tuple] = []
        values: list[float] = []
        lower: list[float] = []
        upper: list[float] = []
        # per group, per item: (natural free indices, free slots)
        self.item_slots: list[list[tuple[np.ndarray, np.ndarray]]] = []
        self.latent_slots: list[tuple[np.ndarray, np.ndarray]] = []  # (mean slots, var slots), -1 = fixed
        self.prior_terms: list[tuple[int, float, float]] = []  # (slot, mean, sd)

        def add(label, name, kind, value, lo=-np.inf, hi=np.inf):
            if label is not None and label in slot_of_label:
                return slot_of_label[label]
            slot = len(values)
            if label is not None:
                slot_of_label[label] = slot
            names.append(label or name)
            kinds.append(kind)
            values.append(value)
            lower.append(lo)
            upper.append(hi)
            return slot

        for gi, g in enumerate(self.groups):
            per_item = []
            for ii, it in enumerate(g.items):
                nat = it.natural()
                pnames = it.param_names(prefix=f"{g.name}.i{ii + 1}.")
                idx = np.where(it.free)[0]
                slots = np.empty(idx.size, dtype=int)
                for j, nj in enumerate(idx):
                    kind = _nat_kind(it, nj)
                    slots[j] = add(it.labels[nj], pnames[nj], kind, nat[nj])
                per_item.append((idx, slots))
            self.item_slots.append(per_item)
            lat = g.latent
            mslots = np.full(lat.f, -1, dtype=int)
            vslots = np.full(lat.f, -1, dtype=int)
            for i in range(lat.f):
                if lat.free_mean[i]:
                    mslots[i] = add(
                        lat.labels_mean[i], f"{g.name}.mean{i + 1}", ("mean", i), lat.mean[i]
                    )
                if lat.free_var[i]:
                    vslots[i] = add(
                        lat.labels_var[i],
                        f"{g.name}.var{i + 1}",
                        ("var", i),
                        lat.var[i],
                        lo=_VAR_FLOOR,
                    )
            self.latent_slots.append((mslots, vslots))

        # priors refer to natural indices; map to slots
        for gi, g in enumerate(self.groups):
            for pr in g.priors:
                idx, slots = self.item_slots[gi][pr.item]
                where = np.where(idx == pr.param)[0]
                if where.size == 0:
                    raise ValueError("prior on a fixed parameter")
                self.prior_terms.append((int(slots[where[0]]), pr.mean, pr.sd))

        self.slot_kinds = kinds
        self._meta = ParamVector(
            values=np.array(values),
            names=names,
            lower=np.array(lower),
            upper=np.array(upper),
        )
        self.d = len(values)
        # which slots belong to item parameters (Newton block)
        item_mask = np.zeros(self.d, dtype=bool)
        for per_item in self.item_slots:
            for _, slots in per_item:
                item_mask[slots] = True
        self.item_slot_mask = item_mask

    def _prepare_data(self):
        # per group, per item: list of index arrays by category, plus safe codes
        self.cat_index: list[list[list[np.ndarray]]] = []
        self.safe_codes: list[list[np.ndarray]] = []
        self.miss_mask: list[list[np.ndarray]] = []
        for g, dat in zip(self.groups, self.data):
            gi_idx, gi_codes, gi_miss = [], [], []
            y = dat.patterns
            for i, it in enumerate(g.items):
                col = y[:, i]
                gi_idx.append([np.where(col == k)[0] for k in range(it.K)])
                miss = col == MISSING
                codes = np.where(miss, 0, col)
                gi_codes.append(codes)
                gi_miss.append(miss)
            self.cat_index.append(gi_idx)
            self.safe_codes.append(gi_codes)
            self.miss_mask.append(gi_miss)

    # --- parameter plumbing ---------------------------------------------------

    def param_meta(self) -> ParamVector:
        return self._meta

    def start_values(self) -> np.ndarray:
        return self._meta.values.copy()

    def _nat_for(self, gi: int, ii: int, theta: np.ndarray) -> np.ndarray:
        it = self.groups[gi].items[ii]
        nat = it.natural()
        idx, slots = self.item_slots[gi][ii]
        nat[idx] = theta[slots]
        return nat

    def _latent_for(self, gi: int, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lat = self.groups[gi].latent
        mean = lat.mean.copy()
        var = lat.var.copy()
        mslots, vslots = self.latent_slots[gi]
        for i in range(lat.f):
            if mslots[i] >= 0:
                mean[i] = theta[mslots[i]]
            if vslots[i] >= 0:
                var[i] = theta[vslots[i]]
        return mean, var

    def _log_weights(self, gi: int, theta: np.ndarray) -> np.ndarray:
        quad = self.quads[gi]
        mean, var = self._latent_for(gi, theta)
        diff = quad.points - mean
        logw = -0.5 * ((diff**2) / var).sum(axis=1) - 0.5 * np.log(var).sum()
        return logw - logsumexp(logw)

    def _item_tables(self, gi: int, ii: int, nat: np.ndarray):
        """Cached (q,K) log-prob table and (npat,q) pattern contribution."""
        cache = self._item_caches[gi][ii]
        key = nat.tobytes()
        hit = cache.get(key)
        if hit is not None:
            return hit
        it = self.groups[gi].items[ii]
        P = item_probs(it, nat, self.quads[gi].points)
        logP = np.log(np.maximum(P, _LOG_FLOOR))
        codes = self.safe_codes[gi][ii]
        contrib = logP[:, codes].T.copy()  # (npat, q)
        miss = self.miss_mask[gi][ii]
        if miss.any():
            contrib[miss, :] = 0.0
        value = (logP, contrib)
        cache.put(key, value)
        return value

    # --- E-step ---------------------------------------------------------------

    def e_step(self, theta: np.ndarray) -> EStepTables:
        theta = np.asarray(theta, dtype=float)
        key = theta.tobytes()
        hit = self._estep_cache.get(key)
        if hit is not None:
            return hit
        data_ll = 0.0
        group_tables = []
        for gi, (g, dat) in enumerate(zip(self.groups, self.data)):
            q = self.quads[gi].q
            logw = self._log_weights(gi, theta)
            npat = dat.patterns.shape[0]
            if npat == 0:
                group_tables.append(
                    GroupTables(nbar=np.zeros(q), rbar=[np.zeros((q, it.K)) for it in g.items])
                )
                continue
            M = np.tile(logw, (npat, 1))
            for ii in range(len(g.items)):
                nat = self._nat_for(gi, ii, theta)
                _, contrib = self._item_tables(gi, ii, nat)
                M += contrib
            lse = logsumexp(M, axis=1)
            if np.any(~np.isfinite(lse)):
                bad = int(np.where(~np.isfinite(lse))[0][0])
                raise NonFinitePattern(f"pattern {bad} has zero likelihood at all nodes")
            data_ll += float(dat.freq @ lse)
            W = np.exp(M - lse[:, None]) * dat.freq[:, None]
            nbar = W.sum(axis=0)
            rbar = []
            for ii, it in enumerate(g.items):
                tab = np.zeros((q, it.K))
                for k, idx in enumerate(self.cat_index[gi][ii]):
                    if idx.size:
                        tab[:, k] = W[idx].sum(axis=0)
                rbar.append(tab)
            group_tables.append(GroupTables(nbar=nbar, rbar=rbar))
        prior_ll = 0.0
        for slot, m, sd in self.prior_terms:
            prior_ll += -0.5 * ((theta[slot] - m) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)
        tables = EStepTables(groups=group_tables, data_ll=data_ll, prior_ll=float(prior_ll))
        if len(self._estep_cache) >= 4:
            self._estep_cache.pop(next(iter(self._estep_cache)))
        self._estep_cache[key] = tables
        return tables

    def observed_ll(self, theta: np.ndarray) -> float:
        return self.e_step(theta).penalized_ll

    def observed_data_ll(self, theta: np.ndarray) -> float:
        """Data log-likelihood without the prior density."""
        return self.e_step(theta).data_ll

    # --- M-step ---------------------------------------------------------------

    def _item_objective(self, tables: EStepTables, theta: np.ndarray) -> float:
        total = 0.0
        for gi, g in enumerate(self.groups):
            for ii, it in enumerate(g.items):
                nat = self._nat_for(gi, ii, theta)
                P = item_probs(it, nat, self.quads[gi].points)
                total += float(
                    np.sum(tables.groups[gi].rbar[ii] * np.log(np.maximum(P, _LOG_FLOOR)))
                )
        for slot, m, sd in self.prior_terms:
            total += -0.5 * ((theta[slot] - m) / sd) ** 2
        return total

    def _item_grad_hess(self, tables: EStepTables, theta: np.ndarray):
        grad = np.zeros(self.d)
        hess = np.zeros((self.d, self.d))
        for gi, g in enumerate(self.groups):
            nodes = self.quads[gi].points
            for ii, it in enumerate(g.items):
                nat = self._nat_for(gi, ii, theta)
                rbar = tables.groups[gi].rbar[ii]
                _, G, H = item_logprob_derivs(it, nat, nodes)
                g_nat = np.einsum("qk,qkp->p", rbar, G)
                h_nat = np.einsum("qk,qkab->ab", rbar, H)
                idx, slots = self.item_slots[gi][ii]
                np.add.at(grad, slots, g_nat[idx])
                np.add.at(hess, (slots[:, None], slots[None, :]), h_nat[np.ix_(idx, idx)])
        for slot, m, sd in self.prior_terms:
            grad[slot] += -(theta[slot] - m) / sd**2
            hess[slot, slot] += -1.0 / sd**2
        return grad, hess

    def _check_feasible(self, theta: np.ndarray) -> bool:
        lo, hi = self._meta.lower, self._meta.upper
        if np.any(theta < lo) or np.any(theta > hi):
            return False
        for gi, g in enumerate(self.groups):
            for ii, it in enumerate(g.items):
                if it.kind == GRADED:
                    nat = self._nat_for(gi, ii, theta)
                    c = nat[it.f :]
                    if np.any(np.diff(c) >= 0):
                        return False
        return True

    def m_step(self, tables: EStepTables, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).copy()
        sel = np.where(self.item_slot_mask)[0]
        if sel.size:
            obj = self._item_objective(tables, theta)
            for _ in range(100):
                grad, hess = self._item_grad_hess(tables, theta)
                gsub = grad[sel]
                hsub = hess[np.ix_(sel, sel)]
                step = _newton_direction(hsub, gsub)
                improved = False
                scale = 1.0
                for _ in range(20):
                    cand = theta.copy()
                    cand[sel] = theta[sel] + scale * step
                    if not self._check_feasible(cand):
                        scale *= 0.5
                        continue
                    obj_new = self._item_objective(tables, cand)
                    if obj_new >= obj - 1e-13 * (1.0 + abs(obj)):
                        improved = True
                        break
                    scale *= 0.5
                if not improved:
                    if np.linalg.norm(gsub, np.inf) > 1e-4 * (1.0 + abs(obj)):
                        raise MStepDivergence(
                            "Newton cannot improve the M-step objective"
                        )
                    break
                change = abs(obj_new - obj)
                theta, obj = cand, obj_new
                if change <= self.config.mstep_rel_tolerance * max(abs(obj), 1.0):
                    break
        # closed-form latent moment updates
        for gi, g in enumerate(self.groups):
            mslots, vslots = self.latent_slots[gi]
            if np.all(mslots < 0) and np.all(vslots < 0):
                continue
            nbar = tables.groups[gi].nbar
            n_g = nbar.sum()
            if n_g <= 0:
                continue
            pts = self.quads[gi].points
            mean_hat = (nbar @ pts) / n_g
            mean, _ = self._latent_for(gi, theta)
            for i in range(g.latent.f):
                if mslots[i] >= 0:
                    theta[mslots[i]] = mean_hat[i]
                    mean[i] = mean_hat[i]
            for i in range(g.latent.f):
                if vslots[i] >= 0:
                    m2 = float(nbar @ (pts[:, i] - mean[i]) ** 2) / n_g
                    theta[vslots[i]] = max(m2, _VAR_FLOOR)
        return theta

    def cycle(self, theta: np.ndarray) -> np.ndarray:
        tables = self.e_step(np.asarray(theta, dtype=float))
        return self.m_step(tables, theta)

    # --- complete-data information ---------------------------------------------

    def complete_info(self, theta: np.ndarray) -> np.ndarray:
        """Negative Hessian of the expected complete-data log-likelihood."""
        theta = np.asarray(theta, dtype=float)
        tables = self.e_step(theta)
        _, hess = self._item_grad_hess(tables, theta)
        info = -hess
        for gi, g in enumerate(self.groups):
            mslots, vslots = self.latent_slots[gi]
            if np.all(mslots < 0) and np.all(vslots < 0):
                continue
            nbar = tables.groups[gi].nbar
            n_g = nbar.sum()
            pts = self.quads[gi].points
            mean, var = self._latent_for(gi, theta)
            s1 = nbar @ pts  # (f,)
            for i in range(g.latent.f):
                mi, vi = mslots[i], vslots[i]
                m2 = float(nbar @ (pts[:, i] - mean[i]) ** 2)
                if mi >= 0:
                    info[mi, mi] += n_g / var[i]
                if vi >= 0:
                    info[vi, vi] += m2 / var[i] ** 3 - n_g / (2 * var[i] ** 2)
                if mi >= 0 and vi >= 0:
                    cross = (s1[i] - n_g * mean[i]) / var[i] ** 2
                    info[mi, vi] += cross
                    info[vi, mi] += cross
        return (info + info.T) / 2.0


def _nat_kind(item: ItemSpec, nj: int) -> tuple:
    f = item.f
    if nj < f:
        return ("slope", nj)
    if item.kind == DICHOTOMOUS:
        return ("intercept", 0) if nj == f else ("g", 0)
    if item.kind == GRADED:
        return ("intercept", nj - f)
    if nj < f + item.K - 1:
        return ("alpha", nj - f)
    return ("gamma", nj - f - (item.K - 1))


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Ascent direction -H^{-1} g with a ridge fallback for indefinite H."""
    ridge = 0.0
    scale = max(np.abs(np.diag(hess)).max(), 1.0)
    for _ in range(12):
        try:
            step = np.linalg.solve(hess - ridge * scale * np.eye(hess.shape[0]), -grad)
        except np.linalg.LinAlgError:
            step = None
        if step is not None and np.all(np.isfinite(step)) and step @ grad > 0:
            return step
        ridge = 1e-8 if ridge == 0.0 else ridge * 100.0
    return grad / scale  # gradient ascent as a last resort


def as_em_model(
    groups: list[IfaGroupSpec],
    data: list[ResponseData],
    quad: Quadrature | list[Quadrature],
    config: EMConfig | None = None,
) -> IfaModel:
    """Bind an item factor specification and data into an EM map."""
    return IfaModel(groups, data, quad, config)
