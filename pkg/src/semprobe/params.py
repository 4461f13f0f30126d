"""Named, bounded parameter vectors with optional equality groups.

A ParamVector describes the full (possibly redundant) parameter list of a
model. Entries that share an ``equality_group`` label are constrained to be
identical and occupy a single free slot. The free vector is what the EM
engine and all SEM machinery operate on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParamVector:
    values: np.ndarray
    names: list[str]
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    equality_group: list[str | None] | None = None

    # derived free-structure, filled in __post_init__
    free_slot: np.ndarray = field(init=False, repr=False)
    n_free: int = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        d = self.values.size
        if d < 1:
            raise ValueError("ParamVector needs at least one entry")
        if len(self.names) != d:
            raise ValueError("names length mismatch")
        if self.lower is None:
            self.lower = np.full(d, -np.inf)
        if self.upper is None:
            self.upper = np.full(d, np.inf)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.values < self.lower) or np.any(self.values > self.upper):
            raise ValueError("values outside bounds")
        if self.equality_group is None:
            self.equality_group = [None] * d

        slot_of_group: dict[str, int] = {}
        slots = np.empty(d, dtype=int)
        nxt = 0
        for i, grp in enumerate(self.equality_group):
            if grp is None:
                slots[i] = nxt
                nxt += 1
            elif grp in slot_of_group:
                slots[i] = slot_of_group[grp]
            else:
                slot_of_group[grp] = nxt
                slots[i] = nxt
                nxt += 1
        self.free_slot = slots
        self.n_free = nxt
        # entries sharing a group must agree
        free = self.to_free()
        if not np.array_equal(self.expand(free), self.values):
            raise ValueError("equality-grouped entries hold different values")

    def to_free(self) -> np.ndarray:
        """Collapse the full vector to free slots (first occurrence wins)."""
        out = np.empty(self.n_free)
        seen = np.zeros(self.n_free, dtype=bool)
        for i, s in enumerate(self.free_slot):
            if not seen[s]:
                out[s] = self.values[i]
                seen[s] = True
        return out

    def expand(self, free: np.ndarray) -> np.ndarray:
        """Map a free vector back to the full parameter layout."""
        return np.asarray(free, dtype=float)[self.free_slot]

    def free_names(self) -> list[str]:
        out: list[str | None] = [None] * self.n_free
        for i, s in enumerate(self.free_slot):
            if out[s] is None:
                out[s] = self.names[i]
        return out  # type: ignore[return-value]

    def free_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n_free, -np.inf)
        hi = np.full(self.n_free, np.inf)
        for i, s in enumerate(self.free_slot):
            lo[s] = max(lo[s], self.lower[i])
            hi[s] = min(hi[s], self.upper[i])
        return lo, hi
