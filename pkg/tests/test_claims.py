import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import WINDOW, csv_dataset, patient, records_dataset
from comorbidscan.claims import (AGE_GROUPS, AgeGroup, AtcCode, ClaimsDataError,
                                 ClaimsDataset, ClaimsFormatError, DiagnosisCode,
                                 DiagnosisEvent, Sex, StudyWindow, age_group_indices,
                                 age_group_of, age_of, ingest_patients, read_dataset,
                                 write_dataset)


def test_diagnosis_code_validation():
    code = DiagnosisCode("E11")
    assert code.chapter_letter == "E" and code.numeric_part == "11"
    for bad in ("E1", "E111", "e11", "11E", ""):
        with pytest.raises(ValueError):
            DiagnosisCode(bad)
    assert sorted(map(DiagnosisCode, ["I10", "A41", "E11"])) == ["A41", "E11", "I10"]
    assert len({DiagnosisCode("E11"), DiagnosisCode("E11")}) == 1


def test_atc_code_prefix():
    assert AtcCode("A10BA02").matches_prefix("A10")
    assert not AtcCode("B01AC06").matches_prefix("A10")
    for bad in ("", "a10", "1A", "A10BA023"):
        with pytest.raises(ValueError):
            AtcCode(bad)


def test_sex_codes():
    assert {s.value for s in Sex} == {"M", "F"}
    assert Sex.from_code(Sex.FEMALE.code) is Sex.FEMALE


@pytest.mark.parametrize("birth, ref, age", [(1946, 2006, 60), (2006, 2006, 0), (1936, 2007, 71)])
def test_age_of(birth, ref, age):
    assert age_of(birth, ref) == age


def test_age_of_group_boundary_example():
    assert age_group_of(age_of(1936, 2007)) == AgeGroup(70)


def test_age_of_negative():
    with pytest.raises(ClaimsDataError):
        age_of(2008, 2006)


@pytest.mark.parametrize("age, lower", [(0, 0), (64, 60), (65, 65), (109, 105)])
def test_age_group_of(age, lower):
    assert age_group_of(age) == AgeGroup(lower)


def test_age_group_clamp_counts_warning():
    from collections import Counter
    warnings = Counter()
    assert age_group_of(117, warnings) == AGE_GROUPS[-1]
    assert warnings["age_clamped"] == 1


def test_age_groups_tile():
    assert AGE_GROUPS[0].lower == 0 and AGE_GROUPS[-1].upper == 110
    for g, h in zip(AGE_GROUPS, AGE_GROUPS[1:]):
        assert g.upper == h.lower
    assert AgeGroup.from_label("60-65") == AgeGroup(60)
    assert 64 in AgeGroup(60) and 65 not in AgeGroup(60)


@given(st.integers(min_value=0, max_value=109))
def test_age_group_total_and_unique(age):
    hits = [g for g in AGE_GROUPS if age in g]
    assert hits == [age_group_of(age)]
    assert age_group_indices(np.array([age]))[0] == hits[0].index


def test_study_window():
    w = StudyWindow.parse("2006-2007")
    assert list(w.years) == [2006, 2007]
    assert 2007 in w and 2008 not in w


def test_empty_diagnosis_file():
    ds = csv_dataset("P1,1950,F,0,1\nP2,1960,M,0,1\n")
    assert len(ds) == 2
    assert all(rec.diagnoses == () for rec in ds)


def test_unknown_sex_rejected():
    ds = csv_dataset("P1,1950,F,0,1\nP2,1960,U,0,1\n" + "".join(f"Q{i},1960,M,0,1\n" for i in range(20)))
    assert "P2" not in set(ds.patient_ids)
    assert ds.report.rows_rejected["patients"] == 1
    assert ds.report.reasons[("patients", "unknown_sex")] == 1


def test_duplicate_diagnosis_rows_collapse():
    ds = csv_dataset("P1,1950,F,0,1\n", "P1,E11,2006\nP1,E11,2006\n")
    assert ds.record(0).diagnoses == (DiagnosisEvent("E11", 2006),)
    assert ds.report.duplicates_collapsed == 1


def test_four_character_codes_truncated():
    ds = csv_dataset("P1,1950,F,0,1\n", "P1,E11.9,2006\nP1,I109,2007\n")
    assert [ev.code for ev in ds.record(0).diagnoses] == ["E11", "I10"]


def test_out_of_window_events_dropped_and_counted():
    ds = csv_dataset("P1,1950,F,0,1\n", "P1,E11,2005\nP1,E11,2006\n", "P1,A10BA02,2009\n")
    assert ds.record(0).diagnoses == (DiagnosisEvent("E11", 2006),)
    assert ds.record(0).prescriptions == ()
    assert ds.report.out_of_window["diagnoses"] == 1
    assert ds.report.out_of_window["prescriptions"] == 1


def test_malformed_header_is_fatal():
    with pytest.raises(ClaimsFormatError):
        ingest_patients(io.StringIO("id,birth,sex\nP1,1950,F\n"),
                        io.StringIO("patient_id,icd10,year\n"),
                        io.StringIO("patient_id,atc,year\n"), WINDOW)


def test_too_many_rejections_is_fatal():
    body = "P1,1950,F,0,1\n" + "".join(f"P{i},1950,X,0,1\n" for i in range(2, 5))
    with pytest.raises(ClaimsDataError):
        csv_dataset(body)


def test_row_level_rejections():
    patients = "".join(f"P{i},1950,F,0,1\n" for i in range(80))
    dx = "P1,E11,2006\nP2,1E1,2006\nP3,,2006\n,E11,2006\nP999,E11,2006\nP4,E11,20x6\n" + \
        "".join(f"P{i},I10,2007\n" for i in range(5, 80))
    ds = csv_dataset(patients, dx)
    reasons = {r for (table, r), n in ds.report.reasons.items() if table == "diagnoses"}
    assert ds.report.rows_rejected["diagnoses"] == 5
    assert reasons == {"bad_code", "bad_patient_id", "bad_year", "unknown_patient"}


def test_age_out_of_range_rejected():
    ds = csv_dataset("P1,1880,F,0,1\n" + "".join(f"P{i},1950,F,0,1\n" for i in range(2, 30)))
    assert "P1" not in set(ds.patient_ids)


def test_roundtrip(tmp_path, small_synthetic):
    dataset, _ = small_synthetic
    write_dataset(dataset, tmp_path)
    again = read_dataset(tmp_path, dataset.window)
    assert again.equals(dataset)
    assert again.record(17) == dataset.record(17)


def test_ingestion_order_independent(tmp_path):
    patients = ["P1,1950,F,0,1", "P2,1960,M,1,0", "P3,1970,F,0,1"]
    dx = ["P1,E11,2006", "P1,I10,2007", "P2,E10,2006", "P3,A41,2007", "P1,E11,2006"]
    rx = ["P1,A10BA02,2006", "P3,B01AC06,2007"]
    a = csv_dataset("\n".join(patients) + "\n", "\n".join(dx) + "\n", "\n".join(rx) + "\n")
    b = csv_dataset("\n".join(patients[::-1]) + "\n", "\n".join(dx[::-1]) + "\n",
                    "\n".join(rx[::-1]) + "\n")
    assert a.equals(b)


record_strategy = st.builds(
    lambda i, birth, sex, dx: patient(f"P{i}", birth, sex, dx=dx),
    st.integers(0, 10_000), st.integers(1900, 2006), st.sampled_from("MF"),
    st.lists(st.tuples(st.sampled_from(["A41", "E11", "I10", "Z00"]), st.sampled_from([2006, 2007])),
             max_size=6))


@settings(max_examples=50, deadline=None)
@given(st.lists(record_strategy, max_size=12, unique_by=lambda r: r.patient_id))
def test_records_roundtrip_property(records):
    ds = records_dataset(records)
    by_id = {r.patient_id: r for r in records}
    for rec in ds:
        original = by_id[rec.patient_id]
        assert set(rec.diagnoses) == set(original.diagnoses)
        assert rec.birth_year == original.birth_year and rec.sex == original.sex


def test_from_arrays_rejects_out_of_window_years():
    with pytest.raises(ClaimsDataError):
        records_dataset([patient("P1", dx=[("E11", 2010)])])


def test_dataset_is_read_only():
    ds = records_dataset([patient("P1", dx=[("E11", 2006)])])
    with pytest.raises(ValueError):
        ds.dx_year[0] = 2007


def test_subset_keeps_vocabulary():
    ds = records_dataset([patient("P1", dx=[("E11", 2006)]), patient("P2", dx=[("I10", 2007)])])
    sub = ds.subset(np.array([False, True]))
    assert sub.dx_codes == ds.dx_codes
    assert sub.record(0).diagnoses == (DiagnosisEvent("I10", 2007),)
    assert isinstance(sub, ClaimsDataset)
