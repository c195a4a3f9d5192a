import io

import numpy as np
import pytest

from comorbidscan.claims import (ClaimsDataset, DiagnosisEvent, PatientRecord,
                                 PrescriptionEvent, Sex, StudyWindow, ingest_patients)
from comorbidscan.synthgen import GeneratorSpec, IndexDisease, NullDiagnoses, PlantedEffect, generate

WINDOW = StudyWindow(2006, 2007)


def csv_dataset(patients, diagnoses="", prescriptions="", window=WINDOW, **kwargs):
    """Ingest three CSV bodies given without their header lines."""
    def stream(header, body):
        return io.StringIO(header + "\n" + body)
    return ingest_patients(
        stream("patient_id,birth_year,sex,died_in_window,inpatient", patients),
        stream("patient_id,icd10,year", diagnoses),
        stream("patient_id,atc,year", prescriptions), window, **kwargs)


def patient(pid, birth_year=1950, sex="F", died=False, inpatient=True, dx=(), rx=()):
    return PatientRecord(pid, birth_year, Sex(sex), died, inpatient,
                         tuple(DiagnosisEvent(c, y) for c, y in dx),
                         tuple(PrescriptionEvent(c, y) for c, y in rx))


def records_dataset(records, window=WINDOW):
    return ClaimsDataset.from_records(records, window)


@pytest.fixture(scope="session")
def small_synthetic():
    """20k patients with one planted comorbidity per index and some nulls."""
    spec = GeneratorSpec(
        population_size=20_000, seed=11,
        indices=(IndexDisease("E10", 0.03), IndexDisease("E11", 0.15)),
        planted_effects=(PlantedEffect("I10", "E11", baseline=0.1, target_rr=2.5),
                         PlantedEffect("G63", "E10", baseline=0.05, target_rr=4.0, gender_skew=1.5)),
        null_diagnoses=NullDiagnoses(20, (0.02, 0.1)), inpatient_rate=0.9, death_rate=0.02)
    dataset, truth = generate(spec)
    return dataset, truth


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
