"""2x2 tables, relative risk, Pearson chi-squared and Benjamini-Hochberg.

Every scalar function has an array twin used by the scan; both share the same
arithmetic so results are identical element-wise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np
from scipy.special import erfc

Z_95 = 1.96


class UndefinedRiskError(ValueError):
    """Relative risk or chi-squared statistic is undefined for the table."""


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Index status (rows) by diagnosis status (columns).

    a: case with diagnosis, b: case without, c: control with, d: control without.
    """

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        for name in "abcd":
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise ValueError(f"cell {name} must be a non-negative integer, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def cells(self) -> tuple[int, int, int, int]:
        return self.a, self.b, self.c, self.d

    @property
    def total(self) -> int:
        return self.a + self.b + self.c + self.d

    def swapped_arms(self) -> "ContingencyTable2x2":
        return ContingencyTable2x2(self.c, self.d, self.a, self.b)

    def scaled(self, k: int) -> "ContingencyTable2x2":
        return ContingencyTable2x2(k * self.a, k * self.b, k * self.c, k * self.d)

    def passes_gate(self, minimum: int = 10) -> bool:
        """True when every cell is strictly greater than ``minimum``."""
        return min(self.cells) > minimum


@dataclass(frozen=True)
class RelativeRisk:
    point: float
    ci_low: float
    ci_high: float
    level: float = 0.95


def relative_risk_arrays(a, b, c, d, z: float = Z_95):
    """Point estimate and log-normal (Katz) interval, element-wise.

    Cells must satisfy a, c > 0 and both row margins > 0; other entries give
    nan/inf.
    """
    a, b, c, d = (np.asarray(v, dtype=np.float64) for v in (a, b, c, d))
    with np.errstate(divide="ignore", invalid="ignore"):
        point = (a / (a + b)) / (c / (c + d))
        se = np.sqrt(1.0 / a - 1.0 / (a + b) + 1.0 / c - 1.0 / (c + d))
        log_point = np.log(point)
        return point, np.exp(log_point - z * se), np.exp(log_point + z * se)


def relative_risk(t: ContingencyTable2x2) -> RelativeRisk:
    if t.a + t.b == 0 or t.c + t.d == 0 or t.a == 0 or t.c == 0:
        raise UndefinedRiskError(f"relative risk undefined for {t}")
    point, low, high = relative_risk_arrays(t.a, t.b, t.c, t.d)
    return RelativeRisk(float(point), float(low), float(high))


def chi2_sf_1dof(x):
    """Survival function of chi-squared with one degree of freedom.

    Uses P(X > x) = erfc(sqrt(x / 2)) with scipy's Cephes ``erfc``.
    """
    return erfc(np.sqrt(np.asarray(x, dtype=np.float64) / 2.0))


def chi_squared_arrays(a, b, c, d):
    """Pearson statistic (no continuity correction) and p-value, element-wise."""
    a, b, c, d = (np.asarray(v, dtype=np.int64) for v in (a, b, c, d))
    diff = (a * d - b * c).astype(np.float64)
    n = (a + b + c + d).astype(np.float64)
    denom = ((a + b).astype(np.float64) * (c + d) * (a + c) * (b + d))
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = n * diff * diff / denom
    return stat, chi2_sf_1dof(stat)


def chi_squared_statistic(t: ContingencyTable2x2) -> float:
    margins = (t.a + t.b, t.c + t.d, t.a + t.c, t.b + t.d)
    if min(margins) == 0:
        raise UndefinedRiskError(f"degenerate margins in {t}")
    stat, _ = chi_squared_arrays(t.a, t.b, t.c, t.d)
    return float(stat)


def chi_squared_p(t: ContingencyTable2x2) -> float:
    return float(chi2_sf_1dof(chi_squared_statistic(t)))


@dataclass(frozen=True)
class PValueSet:
    entries: Sequence[tuple[Hashable, float]]
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for test_id, p in self.entries:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p-value of {test_id!r} outside [0, 1]: {p}")


@dataclass(frozen=True)
class BHResult:
    rejected: frozenset
    q_values: dict
    n_rejected: int
    p_threshold: float  # largest rejected raw p (0 when nothing is rejected)


def bh_arrays(p, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Benjamini-Hochberg step-up on an array of p-values.

    Returns (reject mask, adjusted q-values) in the input order.
    """
    p = np.asarray(p, dtype=np.float64)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    ranks = np.arange(1, m + 1)
    below = ranked <= ranks / m * alpha
    reject = np.zeros(m, dtype=bool)
    if below.any():
        k = int(np.flatnonzero(below)[-1]) + 1
        # ties at the cut-off share the rejection
        reject = p <= ranked[k - 1]
    scaled = ranked * m / ranks
    q_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    q = np.empty(m)
    q[order] = q_sorted
    return reject, q


def benjamini_hochberg(pset: PValueSet) -> BHResult:
    if not pset.entries:
        raise ValueError("empty p-value set")
    ids = [test_id for test_id, _ in pset.entries]
    reject, q = bh_arrays([p for _, p in pset.entries], pset.alpha)
    rejected = frozenset(i for i, r in zip(ids, reject) if r)
    p_arr = np.asarray([p for _, p in pset.entries])
    threshold = float(p_arr[reject].max()) if reject.any() else 0.0
    return BHResult(rejected=rejected, q_values=dict(zip(ids, q.tolist())),
                    n_rejected=int(reject.sum()), p_threshold=threshold)
