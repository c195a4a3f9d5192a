"""Female/male log-quotient gender ratios per age group."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Sequence

import numpy as np

from .claims import AGE_GROUPS, N_AGE_GROUPS, AgeGroup, ClaimsDataset, age_group_indices
from .cohort import CohortAssignment
from .tsv import fmt_float, read_tsv, write_tsv

LN2 = math.log(2.0)
KINDS = ("diagnoses", "prescriptions")


@dataclass(frozen=True)
class GenderRatioCell:
    key: Hashable  # DiagnosisCode or count bucket
    age_group: AgeGroup
    value: float | None  # None when one sex has no patients in the stratum

    @property
    def defined(self) -> bool:
        return self.value is not None


def log_quotient(n_f_x, n_f, n_m_x, n_m):
    """ln((1 + n_f_x/n_f) / (1 + n_m_x/n_m)); nan where a sex stratum is empty.

    Evaluated as a difference of logs so swapping the sexes negates the value
    exactly.
    """
    n_f_x, n_f, n_m_x, n_m = (np.asarray(v, dtype=np.float64) for v in (n_f_x, n_f, n_m_x, n_m))
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.log1p(n_f_x / n_f) - np.log1p(n_m_x / n_m)
    return np.where((n_f > 0) & (n_m > 0), value, np.nan)


def _cell(key, group: AgeGroup, value) -> GenderRatioCell:
    value = float(value)
    return GenderRatioCell(key, group, None if math.isnan(value) else value)


def gender_ratio_matrix(assignment: CohortAssignment, diagnoses: Sequence[str]) -> np.ndarray:
    """GR for each diagnosis (rows) and age group (22 columns) among the cases."""
    dataset = assignment.dataset
    pres_p, pres_c = dataset.presence
    rows = np.full(len(dataset.dx_codes), -1, dtype=np.int64)
    for r, dx in enumerate(diagnoses):
        i = dataset.code_index(dx)
        if i is not None:
            rows[i] = r
    row = rows[pres_c]
    keep = (row >= 0) & assignment.case_mask[pres_p]
    p = pres_p[keep]
    key = (row[keep] * 2 + dataset.sex[p]) * N_AGE_GROUPS + assignment.age_group[p]
    counts = np.bincount(key, minlength=len(diagnoses) * 2 * N_AGE_GROUPS)
    counts = counts.reshape(len(diagnoses), 2, N_AGE_GROUPS)
    n_m, n_f = assignment.case_counts[0], assignment.case_counts[1]
    return log_quotient(counts[:, 1, :], n_f[None, :], counts[:, 0, :], n_m[None, :])


def gender_ratio(assignment: CohortAssignment, x: str, t: AgeGroup) -> GenderRatioCell:
    """Gender ratio of diagnosis ``x`` among the cohort's cases in age group ``t``."""
    return _cell(x, t, gender_ratio_matrix(assignment, [x])[0, t.index])


def distinct_counts(dataset: ClaimsDataset, kind: str) -> np.ndarray:
    """Distinct 3-character diagnoses or distinct full ATC codes per patient."""
    if kind == "diagnoses":
        pres_p, _ = dataset.presence
        return np.bincount(pres_p, minlength=dataset.n_patients)
    if kind == "prescriptions":
        p, c = dataset.rx_patient, dataset.rx_code
        first = np.ones(p.size, dtype=bool)
        if p.size:
            first[1:] = (p[1:] != p[:-1]) | (c[1:] != c[:-1])
        return np.bincount(p[first], minlength=dataset.n_patients)
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


def bucket_labels(bin_edges: Sequence[int] | None, max_count: int) -> list:
    """Exact counts 0..max_count, or ``lo-hi`` labels for half-open bins."""
    if bin_edges is None:
        return list(range(max_count + 1))
    edges = list(bin_edges)
    return [f"{lo}-{hi}" for lo, hi in zip(edges[:-1], edges[1:])]


def gender_ratio_count_matrix(dataset: ClaimsDataset, kind: str, *,
                              members: np.ndarray | None = None,
                              reference_year: int | None = None,
                              bin_edges: Sequence[int] | None = None) -> tuple[list, np.ndarray]:
    """GR(y, t) over count buckets y for the ``members`` population (default all).

    Returns (bucket labels, matrix of shape (n_buckets, 22)).
    """
    if reference_year is None:
        reference_year = dataset.window.first
    if members is None:
        members = np.ones(dataset.n_patients, dtype=bool)
    counts = distinct_counts(dataset, kind)[members]
    sex = dataset.sex[members].astype(np.int64)
    group = age_group_indices(dataset.ages(reference_year)[members]).astype(np.int64)
    max_count = int(counts.max()) if counts.size else 0
    labels = bucket_labels(bin_edges, max_count)
    if bin_edges is None:
        bucket = counts
    else:
        edges = np.asarray(bin_edges)
        bucket = np.searchsorted(edges, counts, side="right") - 1
        inside = (bucket >= 0) & (bucket < len(labels))
        bucket, sex, group = bucket[inside], sex[inside], group[inside]
    n_buckets = len(labels)
    n_y = np.bincount((bucket * 2 + sex) * N_AGE_GROUPS + group,
                      minlength=n_buckets * 2 * N_AGE_GROUPS).reshape(n_buckets, 2, N_AGE_GROUPS)
    n_t = np.bincount(sex * N_AGE_GROUPS + group, minlength=2 * N_AGE_GROUPS).reshape(2, N_AGE_GROUPS)
    matrix = log_quotient(n_y[:, 1, :], n_t[1][None, :], n_y[:, 0, :], n_t[0][None, :])
    return labels, matrix


def gender_ratio_counts(dataset: ClaimsDataset, kind: str, y: int, t: AgeGroup, *,
                        members: np.ndarray | None = None,
                        reference_year: int | None = None) -> GenderRatioCell:
    """GR(y, t): share of each sex in ``t`` having exactly ``y`` distinct codes of ``kind``."""
    if reference_year is None:
        reference_year = dataset.window.first
    if members is None:
        members = np.ones(dataset.n_patients, dtype=bool)
    in_t = members & (age_group_indices(dataset.ages(reference_year)) == t.index)
    has_y = distinct_counts(dataset, kind) == y
    female = dataset.sex == 1
    value = log_quotient((in_t & has_y & female).sum(), (in_t & female).sum(),
                         (in_t & has_y & ~female).sum(), (in_t & ~female).sum())
    return _cell(y, t, value)


def cells_from_matrix(keys: Sequence, matrix: np.ndarray,
                      age_groups: Sequence[AgeGroup] = AGE_GROUPS) -> list[GenderRatioCell]:
    return [_cell(k, g, matrix[i, g.index]) for i, k in enumerate(keys) for g in age_groups]


def export_gender_matrices(cells: Iterable[GenderRatioCell], destination: str | Path, *,
                           keys: Sequence | None = None,
                           age_groups: Sequence[AgeGroup] | None = None,
                           key_column: str = "key") -> Path:
    """Pivot cells into a key x age-group TSV; undefined cells are empty fields.

    Pass ``keys``/``age_groups`` to align rows and columns with another matrix;
    otherwise both are taken from the cells in sorted order.
    """
    cells = list(cells)
    values = {(c.key, c.age_group): c.value for c in cells}
    if keys is None:
        keys = sorted({c.key for c in cells})
    if age_groups is None:
        age_groups = sorted({c.age_group for c in cells})
    rows = ([str(k)] + [fmt_float(values.get((k, g))) for g in age_groups] for k in keys)
    return write_tsv(destination, [key_column] + [g.label for g in age_groups], rows)


def read_gender_matrix(path: str | Path) -> tuple[list[str], list[AgeGroup], np.ndarray]:
    header, rows = read_tsv(path)
    groups = [AgeGroup.from_label(h) for h in header[1:]]
    matrix = np.array([[float(v) if v else np.nan for v in row[1:]] for row in rows],
                      dtype=np.float64).reshape(len(rows), len(groups))
    return [row[0] for row in rows], groups, matrix
