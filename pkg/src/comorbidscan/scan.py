"""Age-resolved co-occurrence scan and comorbidity profile exports."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .claims import AGE_GROUPS, N_AGE_GROUPS, AgeGroup, ClaimsDataset, DiagnosisCode
from .cohort import (CohortAssignment, CohortDefinition, build_cohort,
                     candidate_code_indices)
from .stats import (ContingencyTable2x2, RelativeRisk, bh_arrays,
                    chi_squared_arrays, relative_risk_arrays)
from .tsv import fmt_float, write_keyvalue, write_tsv

log = logging.getLogger(__name__)

GATE_MINIMUM = 10  # every cell must exceed this
FAMILY_MODES = ("cohort", "age_group")

SUMMARY_COLUMNS = ("icd", "p_min", "rr", "ci_low", "ci_high", "age_group")
CELL_COLUMNS = ("icd", "age_group", "a", "b", "c", "d", "gated", "rr", "ci_low",
                "ci_high", "p", "q", "significant", "effective_rr")


@dataclass(frozen=True)
class ComorbidityCell:
    diagnosis: DiagnosisCode
    age_group: AgeGroup
    table: ContingencyTable2x2
    rr: RelativeRisk | None  # None when gated
    p_raw: float | None
    q: float | None
    significant: bool
    effective_rr: float

    @property
    def gated(self) -> bool:
        return self.rr is None


@dataclass(frozen=True)
class DiagnosisSummary:
    """Values at the age group with the smallest raw p-value."""

    diagnosis: DiagnosisCode
    age_group: AgeGroup
    p_min: float
    rr: RelativeRisk
    significant: bool  # significant in at least one age group


@dataclass(eq=False)
class ComorbidityProfile:
    """Cell matrices indexed ``[diagnosis_row, age_group_index]`` over all 22 groups.

    ``age_groups`` lists the groups with a non-empty eligible population; these
    are the columns used by the exports.
    """

    cohort_name: str
    diagnoses: tuple[DiagnosisCode, ...]
    age_groups: tuple[AgeGroup, ...]
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    rr_point: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    p_raw: np.ndarray
    q: np.ndarray
    significant: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def gated(self) -> np.ndarray:
        return np.isnan(self.p_raw)

    @property
    def effective_rr(self) -> np.ndarray:
        return np.where(self.significant, self.rr_point, 1.0)

    def row_of(self, diagnosis: str) -> int:
        try:
            return self.diagnoses.index(diagnosis)
        except ValueError:
            raise KeyError(f"{diagnosis} is not a candidate diagnosis of {self.cohort_name}") from None

    def cell(self, diagnosis: str, group: AgeGroup) -> ComorbidityCell:
        i, j = self.row_of(diagnosis), group.index
        table = ContingencyTable2x2(int(self.a[i, j]), int(self.b[i, j]),
                                    int(self.c[i, j]), int(self.d[i, j]))
        if np.isnan(self.p_raw[i, j]):
            return ComorbidityCell(self.diagnoses[i], group, table, None, None, None, False, 1.0)
        rr = RelativeRisk(float(self.rr_point[i, j]), float(self.ci_low[i, j]),
                          float(self.ci_high[i, j]))
        sig = bool(self.significant[i, j])
        return ComorbidityCell(self.diagnoses[i], group, table, rr, float(self.p_raw[i, j]),
                               float(self.q[i, j]), sig, rr.point if sig else 1.0)

    def cells(self):
        for i, dx in enumerate(self.diagnoses):
            for group in self.age_groups:
                yield self.cell(dx, group)

    @property
    def comorbidity_list(self) -> list[DiagnosisCode]:
        rows = np.flatnonzero(self.significant.any(axis=1))
        return [self.diagnoses[i] for i in rows]

    def summary_for(self, diagnosis: str) -> DiagnosisSummary | None:
        """Minimum-p cell among non-gated cells (ties go to the younger group)."""
        i = self.row_of(diagnosis)
        p = self.p_raw[i]
        if np.isnan(p).all():
            return None
        j = int(np.nanargmin(p))
        rr = RelativeRisk(float(self.rr_point[i, j]), float(self.ci_low[i, j]),
                          float(self.ci_high[i, j]))
        return DiagnosisSummary(self.diagnoses[i], AGE_GROUPS[j], float(p[j]), rr,
                                bool(self.significant[i].any()))

    def summary(self) -> list[DiagnosisSummary]:
        return [self.summary_for(dx) for dx in self.comorbidity_list]


def build_table(dataset: ClaimsDataset, assignment: CohortAssignment,
                x: str, t: AgeGroup) -> ContingencyTable2x2:
    """Cross-tabulate index status by presence of ``x`` within age group ``t``."""
    in_group = assignment.age_group == t.index
    cases = assignment.case_mask & in_group
    controls = assignment.control_mask & in_group
    carrier = np.zeros(dataset.n_patients, dtype=bool)
    code = dataset.code_index(x)
    if code is not None:
        pres_p, pres_c = dataset.presence
        carrier[pres_p[pres_c == code]] = True
    a = int((cases & carrier).sum())
    c = int((controls & carrier).sum())
    return ContingencyTable2x2(a, int(cases.sum()) - a, c, int(controls.sum()) - c)


def _carrier_counts(dataset: ClaimsDataset, assignment: CohortAssignment,
                    code_rows: np.ndarray, n_rows: int, threads: int) -> tuple[np.ndarray, np.ndarray]:
    """Per (row, age group) counts of cases and controls carrying each code."""
    pres_p, pres_c = dataset.presence
    size = n_rows * N_AGE_GROUPS

    def count(lo: int, hi: int):
        p, row = pres_p[lo:hi], code_rows[pres_c[lo:hi]]
        keep = row >= 0
        p, row = p[keep], row[keep]
        key = row.astype(np.int64) * N_AGE_GROUPS + assignment.age_group[p]
        case = assignment.case_mask[p]
        ctrl = assignment.control_mask[p]
        return (np.bincount(key[case], minlength=size),
                np.bincount(key[ctrl], minlength=size))

    n = len(pres_p)
    threads = max(1, threads)
    bounds = np.linspace(0, n, threads + 1).astype(np.int64)
    if threads == 1:
        parts = [count(0, n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(count, bounds[:-1], bounds[1:]))
    # integer sums: exact and independent of the chunking
    case_counts = sum(part[0] for part in parts)
    ctrl_counts = sum(part[1] for part in parts)
    return case_counts.reshape(n_rows, N_AGE_GROUPS), ctrl_counts.reshape(n_rows, N_AGE_GROUPS)


def run_scan(dataset: ClaimsDataset, definition: CohortDefinition, alpha: float = 0.01, *,
             reference_year: int | None = None, family: str = "cohort",
             threads: int = 1, assignment: CohortAssignment | None = None) -> ComorbidityProfile:
    """Scan every candidate diagnosis in every age group.

    Cells with any count of 10 or less are gated out; all remaining p-values of
    the cohort form one Benjamini-Hochberg family (or one family per age group
    with ``family="age_group"``).
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if family not in FAMILY_MODES:
        raise ValueError(f"family must be one of {FAMILY_MODES}, got {family!r}")
    if assignment is None:
        assignment = build_cohort(dataset, definition, reference_year)

    candidates = candidate_code_indices(dataset, definition)
    n_rows = len(candidates)
    code_rows = np.full(len(dataset.dx_codes), -1, dtype=np.int64)
    code_rows[candidates] = np.arange(n_rows)
    a, c = _carrier_counts(dataset, assignment, code_rows, n_rows, threads)
    b = assignment.case_counts.sum(axis=0)[None, :] - a
    d = assignment.control_counts.sum(axis=0)[None, :] - c

    testable = np.minimum(np.minimum(a, b), np.minimum(c, d)) > GATE_MINIMUM
    shape = (n_rows, N_AGE_GROUPS)
    rr_point, ci_low, ci_high = (np.full(shape, np.nan) for _ in range(3))
    p_raw, q = np.full(shape, np.nan), np.full(shape, np.nan)
    significant = np.zeros(shape, dtype=bool)

    idx = np.nonzero(testable)  # row-major: diagnosis order, then age group
    pt, lo, hi = relative_risk_arrays(a[idx], b[idx], c[idx], d[idx])
    _, p = chi_squared_arrays(a[idx], b[idx], c[idx], d[idx])
    rr_point[idx], ci_low[idx], ci_high[idx], p_raw[idx] = pt, lo, hi, p
    if family == "cohort":
        reject, qv = bh_arrays(p, alpha)
        significant[idx], q[idx] = reject, qv
    else:
        for j in range(N_AGE_GROUPS):
            col = idx[1] == j
            if col.any():
                reject, qv = bh_arrays(p[col], alpha)
                rows = idx[0][col]
                significant[rows, j], q[rows, j] = reject, qv

    populated = (assignment.case_counts + assignment.control_counts).sum(axis=0) > 0
    age_groups = tuple(g for g in AGE_GROUPS if populated[g.index])
    n_cells = n_rows * len(age_groups)
    n_tested = int(testable.sum())
    if n_cells and n_tested < n_cells:
        log.warning("%s: %d of %d cells gated (a cell count <= %d)", definition.name,
                    n_cells - n_tested, n_cells, GATE_MINIMUM)

    metadata = {
        "version": __version__,
        "cohort": definition.name,
        **{f"cohort.{k}": v for k, v in definition.describe().items()},
        "alpha": repr(float(alpha)),
        "bh_family": family,
        "gate_minimum_exclusive": str(GATE_MINIMUM),
        "reference_year": str(assignment.reference_year),
        "dataset_fingerprint": dataset.fingerprint(),
        "n_cases": str(assignment.n_cases),
        "n_controls": str(assignment.n_controls),
        "n_candidates": str(n_rows),
        "n_cells": str(n_cells),
        "n_tested": str(n_tested),
        "n_gated": str(n_cells - n_tested),
        "n_significant_cells": str(int(significant.sum())),
        "rr_ci": "katz_log_normal_z1.96",
        "chi_squared": "pearson_uncorrected_erfc",
    }
    return ComorbidityProfile(
        cohort_name=definition.name,
        diagnoses=tuple(dataset.dx_codes[i] for i in candidates),
        age_groups=age_groups, a=a, b=b, c=c, d=d, rr_point=rr_point,
        ci_low=ci_low, ci_high=ci_high, p_raw=p_raw, q=q, significant=significant,
        metadata=metadata)


# -- presentation ----------------------------------------------------------------


def format_estimate(value: float) -> str:
    """Integer above 10, two significant digits below (``12``, ``8.2``, ``0.37``)."""
    if value >= 10:
        return str(int(round(value)))
    digits = max(1 - int(math.floor(math.log10(abs(value)))), 0) if value > 0 else 1
    return f"{value:.{digits}f}"


def format_rr(rr: RelativeRisk) -> str:
    return f"{format_estimate(rr.point)} ({format_estimate(rr.ci_low)}-{format_estimate(rr.ci_high)})"


def format_p(p: float) -> str:
    if p < 1e-4:
        exponent = 16 if p <= 0 else min(int(math.floor(-math.log10(p))), 16)
        return f"<10^-{exponent}"
    return f"{p:.1g}"


def table_s1_row(summary: DiagnosisSummary | None) -> tuple[str, str, str]:
    """(p, RR with CI, age) strings; dashes when the diagnosis was never testable."""
    if summary is None:
        return "-", "-", "-"
    return format_p(summary.p_min), format_rr(summary.rr), summary.age_group.label


# -- exports -----------------------------------------------------------------------


def export_profile(profile: ComorbidityProfile, directory: str | Path,
                   matrix_rows: str = "comorbidities", extra_metadata: dict | None = None) -> dict[str, Path]:
    """Write summary, cell-level and effective-RR matrix TSVs plus a metadata sidecar."""
    directory = Path(directory)
    name = profile.cohort_name
    paths = {}

    rows = []
    for s in profile.summary():
        rows.append((s.diagnosis, fmt_float(s.p_min), fmt_float(s.rr.point),
                     fmt_float(s.rr.ci_low), fmt_float(s.rr.ci_high), s.age_group.label))
    paths["summary"] = write_tsv(directory / f"{name}_summary.tsv", SUMMARY_COLUMNS, rows)

    def cell_rows():
        for i, dx in enumerate(profile.diagnoses):
            for g in profile.age_groups:
                j = g.index
                gated = bool(np.isnan(profile.p_raw[i, j]))
                sig = bool(profile.significant[i, j])
                yield (dx, g.label, profile.a[i, j], profile.b[i, j], profile.c[i, j],
                       profile.d[i, j], int(gated), fmt_float(profile.rr_point[i, j]),
                       fmt_float(profile.ci_low[i, j]), fmt_float(profile.ci_high[i, j]),
                       fmt_float(profile.p_raw[i, j]), fmt_float(profile.q[i, j]), int(sig),
                       fmt_float(profile.rr_point[i, j] if sig else 1.0))
    paths["cells"] = write_tsv(directory / f"{name}_cells.tsv", CELL_COLUMNS, cell_rows())

    matrix_dx = matrix_diagnoses(profile, matrix_rows)
    eff = profile.effective_rr
    cols = [g.index for g in profile.age_groups]
    paths["matrix"] = write_tsv(
        directory / f"{name}_rr_matrix.tsv",
        ["icd"] + [g.label for g in profile.age_groups],
        ([dx] + [fmt_float(eff[profile.row_of(dx), j]) for j in cols] for dx in matrix_dx))

    meta = dict(profile.metadata)
    meta["matrix_rows"] = matrix_rows
    meta["n_comorbidities"] = str(len(profile.comorbidity_list))
    if extra_metadata:
        meta.update(extra_metadata)
    paths["metadata"] = write_keyvalue(directory / f"{name}_metadata.txt", meta)
    return paths


def matrix_diagnoses(profile: ComorbidityProfile, matrix_rows: str) -> list[DiagnosisCode]:
    if matrix_rows == "comorbidities":
        return profile.comorbidity_list
    if matrix_rows == "all":
        return list(profile.diagnoses)
    raise ValueError(f"matrix_rows must be 'comorbidities' or 'all', got {matrix_rows!r}")


def export_table_s1(profiles: list[ComorbidityProfile], path: str | Path) -> Path:
    """Side-by-side p / RR (CI) / age per cohort for the union of comorbidities."""
    union = sorted(set().union(*(p.comorbidity_list for p in profiles)))
    header = ["icd"]
    for prof in profiles:
        header += [f"{prof.cohort_name}_p", f"{prof.cohort_name}_rr", f"{prof.cohort_name}_age"]
    rows = []
    for dx in union:
        row = [dx]
        for prof in profiles:
            summary = prof.summary_for(dx) if dx in prof.diagnoses else None
            row += table_s1_row(summary)
        rows.append(row)
    return write_tsv(path, header, rows)
