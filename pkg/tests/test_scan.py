import numpy as np
import pytest

from conftest import patient, records_dataset
from comorbidscan.claims import AgeGroup
from comorbidscan.cohort import CohortDefinition, DiagnosisSelector, build_cohort, preset
from comorbidscan.scan import (CELL_COLUMNS, SUMMARY_COLUMNS, build_table, export_profile,
                               export_table_s1, format_p, format_rr, run_scan)
from comorbidscan.stats import ContingencyTable2x2, RelativeRisk

E11 = CohortDefinition("dm2", DiagnosisSelector(frozenset({"E11"})))


def counted_dataset(a, b, c, d, x="I10", birth=1944, extra=()):
    """Cases (E11) and controls in one age group with the given 2x2 cells."""
    recs = []
    for n, case, has_x in ((a, True, True), (b, True, False), (c, False, True), (d, False, False)):
        for _ in range(n):
            dx = [("E11", 2006)] if case else []
            if has_x:
                dx.append((x, 2007))
            recs.append(patient(f"P{len(recs)}", birth, "MF"[len(recs) % 2], dx=dx))
    recs.extend(extra)
    return records_dataset(recs)


def test_build_table_fixture():
    ds = counted_dataset(3, 1, 10, 90)
    assert len(ds) == 104
    a = build_cohort(ds, E11)
    assert build_table(ds, a, "I10", AgeGroup(60)) == ContingencyTable2x2(3, 1, 10, 90)
    assert build_table(ds, a, "A41", AgeGroup(60)) == ContingencyTable2x2(0, 4, 0, 100)
    assert build_table(ds, a, "I10", AgeGroup(95)) == ContingencyTable2x2(0, 0, 0, 0)


def test_gate_all_cells_small():
    prof = run_scan(counted_dataset(3, 1, 10, 90), E11)
    assert prof.gated.all()
    assert (prof.effective_rr == 1.0).all()
    assert prof.comorbidity_list == []
    assert prof.metadata["n_tested"] == "0"


@pytest.mark.parametrize("cells", [(10, 40, 20, 400), (40, 10, 20, 400), (40, 20, 10, 400),
                                   (40, 20, 400, 10)])
def test_gate_boundary_ten(cells):
    prof = run_scan(counted_dataset(*cells), E11)
    cell = prof.cell("I10", AgeGroup(60))
    assert cell.gated and cell.p_raw is None and cell.effective_rr == 1.0
    assert not prof.significant.any()


def test_gate_eleven_tested():
    prof = run_scan(counted_dataset(11, 11, 11, 11), E11)
    cell = prof.cell("I10", AgeGroup(60))
    assert not cell.gated and cell.p_raw == pytest.approx(1.0)
    assert cell.effective_rr == 1.0


def test_strong_signal_significant():
    prof = run_scan(counted_dataset(60, 40, 50, 450), E11)
    cell = prof.cell("I10", AgeGroup(60))
    assert cell.significant
    assert cell.effective_rr == cell.rr.point == pytest.approx((60 / 100) / (50 / 500))
    assert prof.comorbidity_list == ["I10"]
    s = prof.summary_for("I10")
    assert s.age_group == AgeGroup(60) and s.p_min == cell.p_raw


def test_alpha_validation():
    ds = counted_dataset(3, 1, 10, 90)
    for alpha in (0.0, 1.0):
        with pytest.raises(ValueError):
            run_scan(ds, E11, alpha)
    with pytest.raises(ValueError):
        run_scan(ds, E11, family="global")


def test_profile_invariants(small_synthetic):
    ds, _ = small_synthetic
    for name in ("dm1", "dm2"):
        prof = run_scan(ds, preset(name))
        a = build_cohort(ds, preset(name))
        # stratification partition
        assert ((prof.a + prof.b).sum(axis=1) == a.n_cases).all()
        assert ((prof.c + prof.d).sum(axis=1) == a.n_controls).all()
        small = np.minimum(np.minimum(prof.a, prof.b), np.minimum(prof.c, prof.d)) <= 10
        assert np.isnan(prof.p_raw[small]).all()
        assert not prof.significant[small].any()
        moved = prof.effective_rr != 1.0
        assert (prof.significant[moved] & ~small[moved]).all()
        for dx in prof.comorbidity_list:
            s = prof.summary_for(dx)
            i = prof.row_of(dx)
            assert s.p_min == np.nanmin(prof.p_raw[i])


def test_two_cohort_independence_and_threads(small_synthetic):
    ds, _ = small_synthetic
    alone = run_scan(ds, preset("dm1"))
    again = run_scan(ds, preset("dm1"), threads=4)
    for key in ("a", "c", "rr_point", "p_raw", "q", "significant"):
        assert np.array_equal(getattr(alone, key), getattr(again, key), equal_nan=True)


def test_planted_effect_recovered(small_synthetic):
    ds, _ = small_synthetic
    prof = run_scan(ds, preset("dm2"))
    assert "I10" in prof.comorbidity_list


def test_per_age_group_family(small_synthetic):
    ds, _ = small_synthetic
    prof = run_scan(ds, preset("dm2"), family="age_group")
    assert prof.metadata["bh_family"] == "age_group"
    assert np.array_equal(np.isnan(prof.q), np.isnan(prof.p_raw))


def test_exports(tmp_path, small_synthetic):
    ds, _ = small_synthetic
    prof = run_scan(ds, preset("dm2"))
    paths = export_profile(prof, tmp_path)
    lines = paths["summary"].read_text().splitlines()
    assert lines[0].split("\t") == list(SUMMARY_COLUMNS)
    assert len(lines) - 1 == len(prof.comorbidity_list)
    cells = paths["cells"].read_text().splitlines()
    assert cells[0].split("\t") == list(CELL_COLUMNS)
    assert len(cells) - 1 == len(prof.diagnoses) * len(prof.age_groups)
    matrix = [l.split("\t") for l in paths["matrix"].read_text().splitlines()]
    assert len(matrix) - 1 == len(prof.comorbidity_list)
    assert all(len(r) == 1 + len(prof.age_groups) for r in matrix)
    assert "dataset_fingerprint" in paths["metadata"].read_text()
    # determinism
    other = tmp_path / "again"
    other.mkdir()
    paths2 = export_profile(run_scan(ds, preset("dm2")), other)
    for key in paths:
        assert paths[key].read_bytes() == paths2[key].read_bytes()


def test_matrix_all_rows_gate_fill(tmp_path):
    extra = [patient(f"Q{i}", 1944, dx=[("A41", 2006)]) for i in range(5)]
    prof = run_scan(counted_dataset(60, 40, 50, 450, extra=extra), E11)
    path = export_profile(prof, tmp_path, matrix_rows="all")["matrix"]
    rows = [l.split("\t") for l in path.read_text().splitlines()[1:]]
    assert [r[0] for r in rows] == ["A41", "I10"]
    assert all(float(v) == 1.0 for v in rows[0][1:])


def test_summary_one_significant_row(tmp_path):
    prof = run_scan(counted_dataset(60, 40, 50, 450), E11)
    lines = export_profile(prof, tmp_path)["summary"].read_text().splitlines()
    assert len(lines) == 2 and lines[1].split("\t")[-1] == "60-65"


def test_table_s1_format(tmp_path):
    assert format_rr(RelativeRisk(12.2, 8.24, 18.1)) == "12 (8.2-18)"
    assert format_rr(RelativeRisk(1.53, 0.372, 2.9)) == "1.5 (0.37-2.9)"
    assert format_p(0.004) == "0.004"
    assert format_p(1e-20) == "<10^-16"
    assert format_p(3e-7) == "<10^-6"
    prof = run_scan(counted_dataset(60, 40, 50, 450), E11)
    path = export_table_s1([prof], tmp_path / "s1.tsv")
    header, row = (l.split("\t") for l in path.read_text().splitlines())
    assert header == ["icd", "dm2_p", "dm2_rr", "dm2_age"]
    assert row[0] == "I10" and row[3] == "60-65"
