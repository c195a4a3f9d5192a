import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import patient, records_dataset
from comorbidscan.claims import AGE_GROUPS, Sex
from comorbidscan.cohort import (DEFAULT_EXCLUDED_CHAPTERS, CohortConfigError, CohortDefinition,
                                 DiagnosisSelector, PrescriptionSelector, build_cohort,
                                 candidate_diagnoses, parse_selector, preset)


def dx_cohort(*codes, **kw):
    return CohortDefinition("t", DiagnosisSelector(frozenset(codes)), **kw)


def test_deceased_case_excluded():
    ds = records_dataset([patient("P1", died=True, dx=[("E10", 2006)]),
                          patient("P2", dx=[("I10", 2006)])])
    with pytest.raises(CohortConfigError):
        build_cohort(ds, dx_cohort("E10"))
    kept = build_cohort(ds, dx_cohort("E10", exclude_deceased=False))
    assert kept.case_ids == {"P1"}


def test_control_exclusion_removes_from_both_arms():
    ds = records_dataset([patient("P1", dx=[("E10", 2006)]), patient("P2", dx=[("E11", 2006)]),
                          patient("P3", dx=[("I10", 2007)])])
    a = build_cohort(ds, dx_cohort("E10", control_exclusion_codes={"E11"}))
    assert a.case_ids == {"P1"}
    assert a.control_ids == {"P3"}


def test_prescription_selector():
    ds = records_dataset([patient("P1", inpatient=False, rx=[("A10BA02", 2006)]),
                          patient("P2", inpatient=False, rx=[("B01AC06", 2006)])])
    a = build_cohort(ds, preset("dm_atc"))
    assert a.case_ids == {"P1"} and a.control_ids == {"P2"}


def test_inpatient_rule():
    ds = records_dataset([patient("P1", dx=[("E11", 2006)]),
                          patient("P2", inpatient=False, dx=[("E11", 2006)]),
                          patient("P3", inpatient=False)])
    a = build_cohort(ds, dx_cohort("E11"))
    assert a.case_ids == {"P1"} and a.control_ids == frozenset()


def test_empty_case_set_fatal():
    ds = records_dataset([patient("P1", dx=[("I10", 2006)])])
    with pytest.raises(CohortConfigError):
        build_cohort(ds, dx_cohort("E10"))


def test_selector_validation():
    with pytest.raises(CohortConfigError):
        DiagnosisSelector(frozenset())
    with pytest.raises(CohortConfigError):
        PrescriptionSelector("")
    with pytest.raises(CohortConfigError):
        parse_selector("procedure:X")
    with pytest.raises(CohortConfigError):
        parse_selector("diagnosis:E1")
    assert parse_selector("diagnosis: E10 | E11").codes == {"E10", "E11"}
    assert parse_selector("prescription:A10").prefix == "A10"


def test_unknown_preset():
    with pytest.raises(CohortConfigError):
        preset("dm3")


def test_candidates_chapter_filter():
    codes = ["R10", "S02", "O80", "V01", "Z00", "E66"]
    ds = records_dataset([patient("P1", dx=[(c, 2006) for c in codes])])
    assert candidate_diagnoses(ds, dx_cohort("E10")) == ["E66"]


def test_candidates_self_exclusion_and_order():
    ds = records_dataset([patient("P1", dx=[("E10", 2006)])])
    assert candidate_diagnoses(ds, dx_cohort("E10")) == []
    ds = records_dataset([patient("P1", dx=[("I10", 2006), ("A41", 2007)])])
    assert candidate_diagnoses(ds, dx_cohort("E10")) == ["A41", "I10"]


def test_excluded_chapters_do_not_affect_selection():
    ds = records_dataset([patient("P1", dx=[("Z00", 2006)]), patient("P2")])
    a = build_cohort(ds, dx_cohort("Z00"))
    assert a.case_ids == {"P1"}


codes = st.sampled_from(["A41", "E10", "E11", "I10", "R10", "S02", "Z00", "O80", "K35"])
pop = st.lists(st.tuples(st.integers(1900, 2006), st.sampled_from("MF"), st.booleans(),
                         st.booleans(), st.lists(codes, max_size=4)),
               min_size=1, max_size=40)


def make(rows):
    recs = [patient(f"P{i}", b, s, died, inp, dx=[(c, 2006) for c in dx])
            for i, (b, s, died, inp, dx) in enumerate(rows)]
    recs.append(patient("PX", dx=[("E10", 2006), ("E11", 2007)]))
    return records_dataset(recs)


@settings(max_examples=60, deadline=None)
@given(pop)
def test_cohort_invariants(rows):
    ds = make(rows)
    a1 = build_cohort(ds, preset("dm1", control_exclusion_codes=frozenset()))
    a2 = build_cohort(ds, preset("dm2", control_exclusion_codes=frozenset()))
    for a in (a1, a2):
        assert not (a.case_mask & a.control_mask).any()
        assert len(a.case_ids) + len(a.control_ids) <= len(ds)
        assert a.case_counts.sum() == len(a.case_ids)
        assert a.control_counts.sum() == len(a.control_ids)
        assert a.cases_in(AGE_GROUPS[0]) == a.case_counts[:, 0].sum()
        assert a.cases_in(AGE_GROUPS[0], Sex.FEMALE) <= a.cases_in(AGE_GROUPS[0])
    # selector swap changes membership only
    assert np.array_equal(a1.population_counts, a2.population_counts)
    for cand in (candidate_diagnoses(ds, a1.definition), candidate_diagnoses(ds, a2.definition)):
        assert not any(c.chapter_letter in DEFAULT_EXCLUDED_CHAPTERS for c in cand)
