"""Built-in model specifications for the simulation studies.

Each spec ships generating parameter values, sample sizes, starting values,
priors, and the quadrature/screening settings used by the study harness.
All dichotomous/graded intercepts are in slope-intercept form: the listed
"difficulty style" intercepts are multiplied by the item slope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownSpec
from .fit import GaussianPrior, IfaGroupSpec
from .items import DICHOTOMOUS, GRADED, ItemSpec, LatentDist


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


@dataclass
class BuiltinModel:
    name: str
    groups: list[IfaGroupSpec]
    points_per_dim: int
    z_lo: float
    z_hi: float
    screen_log_cond: float
    start_overrides: dict = field(default_factory=dict)

    def start_rule(self, kind: tuple, generating: float) -> float:
        """Optimization starting value for one free slot."""
        cat = kind[0]
        if cat == "slope":
            return 1.0
        if cat == "intercept":
            if self.name == "grm20":
                return 0.5 if kind[1] == 0 else -0.5
            return 0.0
        if cat == "g":
            return generating  # lower bounds started at truth
        if cat == "mean":
            return 0.0
        if cat == "var":
            return 1.0
        return generating


BUILTIN_NAMES = ("m2pl5", "m3pl15", "grm20", "cyh1")

_CYH1_TABLE = [
    # (general slope, specific factor index 2..5, specific slope, intercept)
    (1.00, 2, 0.80, 1.00),
    (1.40, 2, 1.50, 0.25),
    (1.70, 2, 1.20, -0.25),
    (2.00, 2, 1.00, -1.00),
    (1.40, 3, 1.00, 1.00),
    (1.70, 3, 0.80, 0.25),
    (2.00, 3, 1.50, -0.25),
    (1.00, 3, 1.20, -1.00),
    (1.70, 4, 1.20, 1.00),
    (2.00, 4, 1.00, 0.25),
    (1.00, 4, 0.80, -0.25),
    (1.40, 4, 1.50, -1.00),
    (2.00, 5, 1.50, 1.00),
    (1.00, 5, 1.20, 0.25),
    (1.40, 5, 1.00, -0.25),
    (1.70, 5, 0.80, -1.00),
]


def _m2pl5() -> BuiltinModel:
    slopes = [0.5, 1.4, 2.2, 3.1, 4.0]
    intercepts = [-1.5, -0.75, 0.0, 0.75, 1.5]
    items = [
        ItemSpec(kind=DICHOTOMOUS, slopes=[a], intercepts=[a * b])
        for a, b in zip(slopes, intercepts)
    ]
    latent = LatentDist(mean=[0.0], var=[1.0])
    group = IfaGroupSpec(name="g1", items=items, latent=latent, n=1000)
    return BuiltinModel(
        name="m2pl5", groups=[group], points_per_dim=49, z_lo=-6, z_hi=6,
        screen_log_cond=16.1,
    )


def _m3pl15() -> BuiltinModel:
    items = []
    priors = []
    base = [-1.5, -0.75, 0.0, 0.75, 1.5]
    for i in range(15):
        gnum = i // 5 + 1
        g_gen = logit(1.0 / (1.0 + gnum))
        items.append(
            ItemSpec(
                kind=DICHOTOMOUS,
                slopes=[2.0],
                intercepts=[2.0 * base[i % 5]],
                g=g_gen,
                labels=["slope", None, None],
            )
        )
        priors.append(GaussianPrior(item=i, param=2, mean=g_gen, sd=0.5))
    latent = LatentDist(mean=[0.0], var=[1.0])
    group = IfaGroupSpec(name="g1", items=items, latent=latent, n=250, priors=priors)
    return BuiltinModel(
        name="m3pl15", groups=[group], points_per_dim=49, z_lo=-6, z_hi=6,
        screen_log_cond=8.5,
    )


def _grm20() -> BuiltinModel:
    items = []
    slopes = np.linspace(0.5, 4.0, 20)
    for i in range(20):
        a = float(slopes[i])
        t1 = -1.5 + (i // 5) * 1.0  # -1.5, -0.5, 0.5, 1.5 in blocks of 5
        t2 = t1 - 0.1
        items.append(
            ItemSpec(kind=GRADED, K=3, slopes=[a], intercepts=[a * t1, a * t2])
        )
    latent = LatentDist(mean=[0.0], var=[1.0])
    group = IfaGroupSpec(name="g1", items=items, latent=latent, n=2000)
    return BuiltinModel(
        name="grm20", groups=[group], points_per_dim=49, z_lo=-6, z_hi=6,
        screen_log_cond=16.1,
    )


def _cyh1() -> BuiltinModel:
    # bifactor: general factor 1 plus specifics 2-5; group 2 lacks items 13-16
    # and therefore factor 5; its latent distribution is estimated.
    def make_item(row: int, f: int) -> ItemSpec:
        a1, spec, a2, c = _CYH1_TABLE[row]
        slopes = np.zeros(f)
        slopes[0] = a1
        slopes[spec - 1] = a2
        free = np.zeros(f + 1, dtype=bool)
        free[0] = free[spec - 1] = free[f] = True
        labels: list[str | None] = [None] * (f + 1)
        labels[0] = f"i{row + 1}.a1"
        labels[spec - 1] = f"i{row + 1}.a{spec}"
        labels[f] = f"i{row + 1}.c"
        return ItemSpec(
            kind=DICHOTOMOUS, slopes=slopes, intercepts=[c], free=free, labels=labels
        )

    g1_items = [make_item(r, 5) for r in range(16)]
    g2_items = [make_item(r, 4) for r in range(12)]
    lat1 = LatentDist(mean=np.zeros(5), var=np.ones(5))
    lat2 = LatentDist(
        mean=[1.0, -0.5, 0.0, 0.5],
        var=[0.8, 1.2, 1.5, 1.0],
        free_mean=np.ones(4, dtype=bool),
        free_var=np.ones(4, dtype=bool),
    )
    groups = [
        IfaGroupSpec(name="g1", items=g1_items, latent=lat1, n=1000),
        IfaGroupSpec(name="g2", items=g2_items, latent=lat2, n=1000),
    ]
    return BuiltinModel(
        name="cyh1", groups=groups, points_per_dim=21, z_lo=-5, z_hi=5,
        screen_log_cond=8.5,
    )


_BUILDERS = {
    "m2pl5": _m2pl5,
    "m3pl15": _m3pl15,
    "grm20": _grm20,
    "cyh1": _cyh1,
}


def builtin_spec(name: str) -> BuiltinModel:
    """Return the named built-in model (generating + starting values)."""
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise UnknownSpec(f"unknown built-in model {name!r}") from None
