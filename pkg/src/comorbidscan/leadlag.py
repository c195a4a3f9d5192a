"""Two-year lead/lag asymmetry indicators with a year-shuffling surrogate test.

For an index disease d and a diagnosis x observed in years t1 < t2 the lead
indicator compares patients whose x appears only in t2 while d is present in
both years against the mirror pattern; the lag indicator does the same with
the roles of d and x exchanged.  Significance comes from surrogates in which
each patient's diagnosis years are randomly permuted among that patient's
diagnosis events.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .claims import ClaimsDataset, DiagnosisCode, Sex
from .cohort import CohortAssignment, DiagnosisSelector, candidate_code_indices
from .tsv import fmt_float, write_tsv

log = logging.getLogger(__name__)

DIRECTIONS = ("lead", "lag")
P_MODES = ("explanation", "literal")
RELEVANCE_TOLERANCE = 0.5
LEADLAG_COLUMNS = ("icd", "cohort", "sex", "direction", "observed", "n_relevant", "p", "verdict")

# Column order of the count arrays.
M_T2, M_T1, LEAD_T2, LEAD_T1, LAG_T2, LAG_T1 = range(6)


@dataclass(frozen=True)
class YearPairCounts:
    """Patients of one sex by index/diagnosis presence in years t1 and t2.

    ``lead_t2`` = M(d,x,t2 | d,not x,t1): d in both years, x only in t2.
    ``lag_t2`` = M(d,x,t2 | not d,x,t1): x in both years, d only in t2.
    The ``_t1`` fields are the mirror images.
    """

    m_t2: int
    m_t1: int
    lead_t2: int
    lead_t1: int
    lag_t2: int
    lag_t1: int

    def swapped_years(self) -> "YearPairCounts":
        return YearPairCounts(self.m_t1, self.m_t2, self.lead_t1, self.lead_t2,
                              self.lag_t1, self.lag_t2)


@dataclass(frozen=True)
class LeadLagResult:
    diagnosis: DiagnosisCode
    sex: Sex
    index: str
    direction: str
    observed: float | None
    surrogate_count_relevant: int
    p_empirical: float | None  # None when no surrogate is relevant
    verdict: bool | None
    m_t2: int = 0

    @property
    def testable(self) -> bool:
        return self.p_empirical is not None


def _indicator(num_t2, m_t2, num_t1, m_t1):
    num_t2, m_t2, num_t1, m_t1 = (np.asarray(v, dtype=np.float64) for v in (num_t2, m_t2, num_t1, m_t1))
    with np.errstate(divide="ignore", invalid="ignore"):
        value = num_t2 / m_t2 - num_t1 / m_t1
    return np.where((m_t2 > 0) & (m_t1 > 0), value, np.nan)


def _scalar(value) -> float | None:
    value = float(value)
    return None if np.isnan(value) else value


def lead_indicator(counts: YearPairCounts) -> float | None:
    """Lead indicator, or None when either year has no d-and-x patient."""
    return _scalar(_indicator(counts.lead_t2, counts.m_t2, counts.lead_t1, counts.m_t1))


def lag_indicator(counts: YearPairCounts) -> float | None:
    return _scalar(_indicator(counts.lag_t2, counts.m_t2, counts.lag_t1, counts.m_t1))


def _indicators_from_counts(counts: np.ndarray, direction: str) -> np.ndarray:
    if direction == "lead":
        return _indicator(counts[..., LEAD_T2], counts[..., M_T2], counts[..., LEAD_T1], counts[..., M_T1])
    return _indicator(counts[..., LAG_T2], counts[..., M_T2], counts[..., LAG_T1], counts[..., M_T1])


def shuffle_years(dx_patient: np.ndarray, dx_year: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Permute years within each patient's block of events (events sorted by patient)."""
    keys = rng.random(dx_year.size)
    order = np.lexsort((keys, dx_patient))
    return dx_year[order]


def surrogate_shuffle(dataset: ClaimsDataset, seed) -> ClaimsDataset:
    """Dataset whose diagnosis years are permuted independently within each patient.

    Codes stay in place, so per patient both the code multiset and the year
    multiset are unchanged.
    """
    rng = np.random.default_rng(seed)
    return dataset.with_diagnosis_years(shuffle_years(dataset.dx_patient, dataset.dx_year, rng))


class _PairFrame:
    """Event arrays of the contributing patients, ready for repeated counting."""

    def __init__(self, dataset: ClaimsDataset, members: np.ndarray, index_codes, t1: int, t2: int):
        sub = dataset.subset(members)
        self.n_codes = len(sub.dx_codes)
        self.dx_patient = np.asarray(sub.dx_patient)
        self.dx_code = np.asarray(sub.dx_code)
        self.dx_year = np.asarray(sub.dx_year)
        self.sex = np.asarray(sub.sex, dtype=np.int64)
        self.n_patients = sub.n_patients
        self.t1, self.t2 = t1, t2
        self.is_index = np.isin(np.asarray(sub.dx_codes, dtype="U3"), sorted(index_codes))
        p, c = self.dx_patient, self.dx_code
        first = np.ones(p.size, dtype=bool)
        if p.size:
            first[1:] = (p[1:] != p[:-1]) | (c[1:] != c[:-1])
        self.starts = np.flatnonzero(first)
        self.pres_p = p[first]
        self.pres_c = c[first]
        pair_index = self.is_index[self.pres_c]
        self.d_pairs = np.flatnonzero(pair_index)
        self.x_pairs = np.flatnonzero(~pair_index)
        self.x_key = (self.sex[self.pres_p[self.x_pairs]] * self.n_codes
                      + self.pres_c[self.x_pairs]) * 16

    def counts(self, years: np.ndarray) -> np.ndarray:
        """Array (2 sexes, n_codes, 6) of year-pair counts for the given event years."""
        if years.size == 0:
            return np.zeros((2, self.n_codes, 6), dtype=np.int64)
        bits = (years == self.t1).astype(np.uint8) | ((years == self.t2).astype(np.uint8) << 1)
        mask = np.bitwise_or.reduceat(bits, self.starts)
        d_mask = np.zeros(self.n_patients, dtype=np.uint8)
        np.bitwise_or.at(d_mask, self.pres_p[self.d_pairs], mask[self.d_pairs])
        combo = d_mask[self.pres_p[self.x_pairs]].astype(np.int64) * 4 + mask[self.x_pairs]
        table = np.bincount(self.x_key + combo, minlength=2 * self.n_codes * 16)
        table = table.reshape(2, self.n_codes, 4, 4)  # [sex, code, d_mask, x_mask]
        out = np.empty((2, self.n_codes, 6), dtype=np.int64)
        out[..., M_T2] = table[:, :, 2:, :][:, :, :, 2:].sum(axis=(2, 3))
        out[..., M_T1] = table[:, :, 1::2, :][:, :, :, 1::2].sum(axis=(2, 3))
        out[..., LEAD_T2] = table[:, :, 3, 2]
        out[..., LEAD_T1] = table[:, :, 3, 1]
        out[..., LAG_T2] = table[:, :, 2, 3]
        out[..., LAG_T1] = table[:, :, 1, 3]
        return out


def _members(assignment: CohortAssignment, sex: Sex | None = None) -> np.ndarray:
    members = assignment.case_mask.copy()
    max_age = assignment.definition.leadlag_max_age
    if max_age is not None:
        members &= assignment.dataset.ages(assignment.reference_year) < max_age
    if sex is not None:
        members &= assignment.dataset.sex == sex.code
    return members


def _index_codes(assignment: CohortAssignment):
    selector = assignment.definition.selector
    if not isinstance(selector, DiagnosisSelector):
        raise ValueError("lead/lag analysis needs a diagnosis-defined index disease")
    return selector.codes


def _default_years(dataset: ClaimsDataset, t1, t2) -> tuple[int, int]:
    t1 = dataset.window.first if t1 is None else int(t1)
    t2 = (t1 + 1) if t2 is None else int(t2)
    if not t1 < t2:
        raise ValueError(f"need t1 < t2, got {t1}, {t2}")
    if t1 not in dataset.window or t2 not in dataset.window:
        raise ValueError(f"years {t1}, {t2} outside study window {dataset.window}")
    return t1, t2


def year_pair_counts(dataset: ClaimsDataset, assignment: CohortAssignment, x: str, sex: Sex,
                     t1: int | None = None, t2: int | None = None) -> YearPairCounts:
    """Year-pair counts over the cohort's cases of one sex (age-restricted if configured)."""
    t1, t2 = _default_years(dataset, t1, t2)
    frame = _PairFrame(dataset, _members(assignment), _index_codes(assignment), t1, t2)
    code = dataset.code_index(x)
    if code is None:
        return YearPairCounts(0, 0, 0, 0, 0, 0)
    counts = frame.counts(frame.dx_year)[sex.code, code]
    return YearPairCounts(*(int(v) for v in counts))


def _surrogate_counts(frame: _PairFrame, n_surrogates: int, seed: int, threads: int) -> np.ndarray:
    def one(index: int) -> np.ndarray:
        # (seed, index) -> independent stream, so results do not depend on scheduling
        rng = np.random.default_rng([int(seed), int(index)])
        return frame.counts(shuffle_years(frame.dx_patient, frame.dx_year, rng))

    if threads > 1 and n_surrogates > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one, range(n_surrogates)))
    else:
        parts = [one(i) for i in range(n_surrogates)]
    if not parts:
        return np.zeros((0, 2, frame.n_codes, 6), dtype=np.int64)
    return np.stack(parts)


def empirical_p(observed: np.ndarray, surrogate: np.ndarray, relevant: np.ndarray,
                mode: str = "explanation") -> tuple[np.ndarray, np.ndarray]:
    """Fraction of relevant surrogates at least as large as the observed value.

    ``surrogate`` and ``relevant`` carry the surrogate index on axis 0.  In
    ``literal`` mode the fraction counts surrogates strictly below the observed
    value instead.  Returns (p, n_relevant); p is nan where n_relevant is 0.
    """
    if mode not in P_MODES:
        raise ValueError(f"mode must be one of {P_MODES}, got {mode!r}")
    if mode == "explanation":
        hits = (surrogate >= observed[None]) & relevant
    else:
        hits = (observed[None] > surrogate) & relevant
    n_relevant = relevant.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = hits.sum(axis=0) / n_relevant
    return np.where(n_relevant > 0, p, np.nan), n_relevant


def run_leadlag(dataset: ClaimsDataset, assignment: CohortAssignment, *,
                diagnoses: Sequence[str] | None = None, sexes: Sequence[Sex] = (Sex.FEMALE, Sex.MALE),
                directions: Sequence[str] = DIRECTIONS, z: int | None = None,
                n_surrogates: int = 100, seed: int = 0, t1: int | None = None,
                t2: int | None = None, mode: str = "explanation", p_threshold: float = 0.05,
                threads: int = 1) -> list[LeadLagResult]:
    """Lead/lag tests for every eligible diagnosis, sex and direction.

    Diagnoses default to the cohort's candidate codes; those with
    M(d, x, t2) < z for a sex are excluded for that sex.  One set of
    surrogates is drawn per call and shared by all tests.
    """
    if n_surrogates < 1:
        raise ValueError("n_surrogates must be at least 1")
    for direction in directions:
        if direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {direction!r}")
    if mode not in P_MODES:
        raise ValueError(f"mode must be one of {P_MODES}, got {mode!r}")
    t1, t2 = _default_years(dataset, t1, t2)
    if z is None:
        z = assignment.definition.leadlag_z
    if diagnoses is None:
        rows = candidate_code_indices(dataset, assignment.definition)
    else:
        rows = np.asarray([i for i in (dataset.code_index(x) for x in diagnoses) if i is not None],
                          dtype=np.int64)
        rows = np.unique(rows)
    frame = _PairFrame(dataset, _members(assignment), _index_codes(assignment), t1, t2)
    # the member subset keeps the full code vocabulary, so rows index it directly
    observed_counts = frame.counts(frame.dx_year)
    surrogate_counts = _surrogate_counts(frame, n_surrogates, seed, threads)

    m_obs = observed_counts[..., M_T2].astype(np.float64)
    m_sur = surrogate_counts[..., M_T2].astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        size_ok = (m_sur > 0) & (np.abs((m_sur - m_obs[None]) / m_sur) < RELEVANCE_TOLERANCE)

    results = []
    name = assignment.definition.name
    for direction in directions:
        obs = _indicators_from_counts(observed_counts, direction)
        sur = _indicators_from_counts(surrogate_counts, direction)
        relevant = size_ok & ~np.isnan(sur)
        p, n_rel = empirical_p(obs, sur, relevant, mode)
        for sex in sexes:
            s = sex.code
            for code in rows:
                m = int(observed_counts[s, code, M_T2])
                if m < z:
                    continue
                value = _scalar(obs[s, code])
                pv = None if value is None else _scalar(p[s, code])
                n = 0 if value is None else int(n_rel[s, code])
                results.append(LeadLagResult(
                    diagnosis=dataset.dx_codes[code], sex=sex, index=name, direction=direction,
                    observed=value, surrogate_count_relevant=n, p_empirical=pv,
                    verdict=None if pv is None else bool(pv < p_threshold), m_t2=m))
    results.sort(key=lambda r: (r.diagnosis, r.sex.value, DIRECTIONS.index(r.direction)))
    n_untestable = sum(not r.testable for r in results)
    if n_untestable:
        log.warning("%s: %d lead/lag tests untestable (no relevant surrogate or undefined indicator)",
                    name, n_untestable)
    return results


def leadlag_test(dataset: ClaimsDataset, assignment: CohortAssignment, x: str, sex: Sex,
                 direction: str, z: int | None = None, n_surrogates: int = 100, seed: int = 0,
                 **kwargs) -> LeadLagResult | None:
    """Single test; None when ``x`` falls below the frequency threshold ``z``.

    Uses the same surrogates as :func:`run_leadlag` with equal arguments.
    """
    results = run_leadlag(dataset, assignment, diagnoses=[x], sexes=[sex], directions=[direction],
                          z=z, n_surrogates=n_surrogates, seed=seed, **kwargs)
    return results[0] if results else None


def export_leadlag(results: Sequence[LeadLagResult], path: str | Path) -> Path:
    """Machine-readable lead/lag table; untestable rows have empty p and verdict."""
    def verdict(r):
        return "" if r.verdict is None else str(int(r.verdict))

    rows = ((r.diagnosis, r.index, r.sex.value, r.direction, fmt_float(r.observed),
             r.surrogate_count_relevant, fmt_float(r.p_empirical), verdict(r)) for r in results)
    return write_tsv(path, LEADLAG_COLUMNS, rows)


def classification_rows(results: Sequence[LeadLagResult]) -> list[tuple[str, str, str, str]]:
    """Significant relationships as (order, icd, type, gender) rows.

    ``order`` reads "leads" when the index disease comes first.
    """
    rows = []
    for r in results:
        if r.verdict:
            order = "leads" if r.direction == "lead" else "lags"
            rows.append((order, r.diagnosis, r.index, r.sex.value))
    return sorted(set(rows), key=lambda row: (row[0], row[1], row[2], row[3]))
