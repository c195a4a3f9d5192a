"""Case and comparison-population selection."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .claims import (N_AGE_GROUPS, AgeGroup, ClaimsDataset, DiagnosisCode,
                     age_group_indices)

log = logging.getLogger(__name__)

# Symptoms (R), injuries (S, T), pregnancy (O), external causes (V-Y) and
# factors influencing health status (Z).
DEFAULT_EXCLUDED_CHAPTERS = frozenset("RSTOVWXYZ")


class CohortConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DiagnosisSelector:
    codes: frozenset

    def __post_init__(self):
        if not self.codes:
            raise CohortConfigError("diagnosis selector needs at least one code")
        object.__setattr__(self, "codes", frozenset(DiagnosisCode(c) for c in self.codes))

    def __str__(self):
        return "diagnosis:" + "|".join(sorted(self.codes))


@dataclass(frozen=True)
class PrescriptionSelector:
    prefix: str

    def __post_init__(self):
        if not self.prefix:
            raise CohortConfigError("prescription selector needs an ATC prefix")

    def __str__(self):
        return f"prescription:{self.prefix}"


def parse_selector(text: str) -> DiagnosisSelector | PrescriptionSelector:
    """Parse ``diagnosis:E10|E11`` or ``prescription:A10``."""
    kind, _, value = text.strip().partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "diagnosis":
            return DiagnosisSelector(frozenset(v.strip() for v in value.split("|") if v.strip()))
        if kind == "prescription":
            return PrescriptionSelector(value.strip())
    except ValueError as exc:
        raise CohortConfigError(str(exc)) from exc
    raise CohortConfigError(f"unknown selector {text!r}")


@dataclass(frozen=True)
class CohortDefinition:
    name: str
    selector: DiagnosisSelector | PrescriptionSelector
    require_inpatient: bool = True
    exclude_deceased: bool = True
    excluded_chapters: frozenset = DEFAULT_EXCLUDED_CHAPTERS
    control_exclusion_codes: frozenset = frozenset()
    # lead/lag settings: minimum M(d, x, t2) and optional age ceiling
    leadlag_z: int = 20
    leadlag_max_age: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "excluded_chapters",
                           frozenset(c.strip().upper() for c in self.excluded_chapters))
        object.__setattr__(self, "control_exclusion_codes",
                           frozenset(DiagnosisCode(c) for c in self.control_exclusion_codes))

    @property
    def index_codes(self) -> frozenset:
        if isinstance(self.selector, DiagnosisSelector):
            return self.selector.codes
        return frozenset()

    def describe(self) -> dict[str, str]:
        return {
            "selector": str(self.selector),
            "require_inpatient": str(int(self.require_inpatient)),
            "exclude_deceased": str(int(self.exclude_deceased)),
            "excluded_chapters": ",".join(sorted(self.excluded_chapters)),
            "control_exclusion": ",".join(sorted(self.control_exclusion_codes)),
            "leadlag_z": str(self.leadlag_z),
            "leadlag_max_age": "" if self.leadlag_max_age is None else str(self.leadlag_max_age),
        }


PRESETS: dict[str, CohortDefinition] = {
    "dm1": CohortDefinition("dm1", DiagnosisSelector(frozenset({"E10"})),
                            control_exclusion_codes=frozenset({"E11"}),
                            leadlag_z=3, leadlag_max_age=30),
    "dm2": CohortDefinition("dm2", DiagnosisSelector(frozenset({"E11"})),
                            control_exclusion_codes=frozenset({"E10"}),
                            leadlag_z=20),
    # all A10 recipients against the rest of the population, hospitalised or not
    "dm_atc": CohortDefinition("dm_atc", PrescriptionSelector("A10"),
                               require_inpatient=False),
}


def preset(name: str, **overrides) -> CohortDefinition:
    try:
        base = PRESETS[name]
    except KeyError:
        raise CohortConfigError(f"unknown cohort preset {name!r}") from None
    return replace(base, **overrides) if overrides else base


def _carriers(dataset: ClaimsDataset, codes) -> np.ndarray:
    mask = np.zeros(dataset.n_patients, dtype=bool)
    vocab_hit = np.isin(np.asarray(dataset.dx_codes, dtype="U3"), sorted(codes))
    if vocab_hit.any():
        mask[dataset.dx_patient[vocab_hit[dataset.dx_code]]] = True
    return mask


def selector_mask(dataset: ClaimsDataset, selector) -> np.ndarray:
    if isinstance(selector, DiagnosisSelector):
        return _carriers(dataset, selector.codes)
    mask = np.zeros(dataset.n_patients, dtype=bool)
    vocab_hit = np.array([c.startswith(selector.prefix) for c in dataset.rx_codes], dtype=bool)
    if vocab_hit.any():
        mask[dataset.rx_patient[vocab_hit[dataset.rx_code]]] = True
    return mask


def _sex_group_counts(sex: np.ndarray, group: np.ndarray, mask: np.ndarray) -> np.ndarray:
    flat = np.bincount(sex[mask].astype(np.int64) * N_AGE_GROUPS + group[mask],
                       minlength=2 * N_AGE_GROUPS)
    return flat.reshape(2, N_AGE_GROUPS)


@dataclass(frozen=True, eq=False)
class CohortAssignment:
    """Case/control membership plus per-sex, per-age-group counts.

    Count tables are indexed ``[sex_code, age_group_index]``.
    """

    definition: CohortDefinition
    dataset: ClaimsDataset
    reference_year: int
    case_mask: np.ndarray
    control_mask: np.ndarray
    eligible_mask: np.ndarray
    age_group: np.ndarray
    case_counts: np.ndarray = field(repr=False)        # N_m/f(d, t)
    control_counts: np.ndarray = field(repr=False)
    population_counts: np.ndarray = field(repr=False)  # N_m/f(t)

    @cached_property
    def case_ids(self) -> frozenset:
        return frozenset(self.dataset.patient_ids[self.case_mask].tolist())

    @cached_property
    def control_ids(self) -> frozenset:
        return frozenset(self.dataset.patient_ids[self.control_mask].tolist())

    @property
    def n_cases(self) -> int:
        return int(self.case_mask.sum())

    @property
    def n_controls(self) -> int:
        return int(self.control_mask.sum())

    def cases_in(self, group: AgeGroup, sex=None) -> int:
        if sex is None:
            return int(self.case_counts[:, group.index].sum())
        return int(self.case_counts[sex.code, group.index])


def build_cohort(dataset: ClaimsDataset, definition: CohortDefinition,
                 reference_year: int | None = None) -> CohortAssignment:
    """Select cases and controls.

    Eligibility (inpatient, alive) applies to both arms.  Controls additionally
    drop carriers of ``control_exclusion_codes``.
    """
    if reference_year is None:
        reference_year = dataset.window.first
    eligible = np.ones(dataset.n_patients, dtype=bool)
    if definition.require_inpatient:
        eligible &= dataset.inpatient
    if definition.exclude_deceased:
        eligible &= ~dataset.died
    matched = selector_mask(dataset, definition.selector)
    cases = matched & eligible
    if not cases.any():
        raise CohortConfigError(f"cohort {definition.name!r}: no patients match {definition.selector}")
    controls = eligible & ~matched
    if definition.control_exclusion_codes:
        controls &= ~_carriers(dataset, definition.control_exclusion_codes)

    ages = dataset.ages(reference_year)
    n_clamped = int((ages >= 110).sum())
    if n_clamped:
        log.warning("%d patients aged 110+ assigned to the top age group", n_clamped)
    group = age_group_indices(ages)
    for arr in (cases, controls, eligible, group):
        arr.setflags(write=False)
    return CohortAssignment(
        definition=definition, dataset=dataset, reference_year=int(reference_year),
        case_mask=cases, control_mask=controls, eligible_mask=eligible, age_group=group,
        case_counts=_sex_group_counts(dataset.sex, group, cases),
        control_counts=_sex_group_counts(dataset.sex, group, controls),
        population_counts=_sex_group_counts(dataset.sex, group, eligible))


def candidate_code_indices(dataset: ClaimsDataset, definition: CohortDefinition) -> np.ndarray:
    """Vocabulary indices of candidate comorbidity codes, in code order."""
    keep = [i for i, code in enumerate(dataset.dx_codes)
            if code.chapter_letter not in definition.excluded_chapters
            and code not in definition.index_codes]
    return np.asarray(keep, dtype=np.int64)


def candidate_diagnoses(dataset: ClaimsDataset, definition: CohortDefinition) -> list[DiagnosisCode]:
    return [dataset.dx_codes[i] for i in candidate_code_indices(dataset, definition)]
