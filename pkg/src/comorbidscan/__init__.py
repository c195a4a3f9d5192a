"""Age- and sex-resolved comorbidity profiles from claims data."""

__version__ = "0.1.0"

from .claims import (AGE_GROUPS, AgeGroup, AtcCode, ClaimsDataset, DiagnosisCode,  # noqa: E402
                     PatientRecord, Sex, StudyWindow, age_group_of, age_of, ingest_patients)
from .cohort import CohortDefinition, build_cohort, candidate_diagnoses, preset  # noqa: E402
from .scan import run_scan  # noqa: E402

__all__ = [
    "AGE_GROUPS", "AgeGroup", "AtcCode", "ClaimsDataset", "DiagnosisCode", "PatientRecord",
    "Sex", "StudyWindow", "age_group_of", "age_of", "ingest_patients", "CohortDefinition",
    "build_cohort", "candidate_diagnoses", "preset", "run_scan",
]
