import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from comorbidscan.stats import (ContingencyTable2x2, PValueSet, UndefinedRiskError,
                                benjamini_hochberg, bh_arrays, chi2_sf_1dof, chi_squared_p,
                                chi_squared_statistic, relative_risk)

cells = st.integers(min_value=1, max_value=500)


def test_rr_symmetric_table():
    rr = relative_risk(ContingencyTable2x2(50, 50, 50, 50))
    assert rr.point == 1.0
    assert rr.ci_low < 1.0 < rr.ci_high


def test_rr_hand_value():
    # (20/100) / (10/200)
    assert relative_risk(ContingencyTable2x2(20, 80, 10, 190)).point == pytest.approx(4.0, rel=1e-15)


def test_rr_swapped_arms_identical():
    t = ContingencyTable2x2(40, 60, 40, 60)
    a, b = relative_risk(t), relative_risk(t.swapped_arms())
    assert a.point == b.point == 1.0
    assert (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)


@pytest.mark.parametrize("cells", [(0, 5, 3, 4), (3, 4, 0, 5), (0, 0, 3, 4), (3, 4, 0, 0)])
def test_rr_undefined(cells):
    with pytest.raises(UndefinedRiskError):
        relative_risk(ContingencyTable2x2(*cells))


def test_table_rejects_negative():
    with pytest.raises(ValueError):
        ContingencyTable2x2(-1, 2, 3, 4)


def test_gate_is_strict():
    assert ContingencyTable2x2(11, 11, 11, 11).passes_gate()
    assert not ContingencyTable2x2(10, 50, 50, 50).passes_gate()


def test_chi2_independent_table():
    t = ContingencyTable2x2(25, 25, 25, 25)
    assert chi_squared_statistic(t) == 0.0
    assert chi_squared_p(t) == 1.0


def test_chi2_hand_value():
    t = ContingencyTable2x2(30, 20, 20, 30)
    assert chi_squared_statistic(t) == pytest.approx(4.0, rel=1e-14)
    # tabulated upper tail of chi2(1) at 4.0
    assert chi_squared_p(t) == pytest.approx(0.04550026, abs=1e-8)


def test_chi2_scales_with_n():
    t = ContingencyTable2x2(30, 20, 20, 30)
    big = t.scaled(10)
    assert chi_squared_statistic(big) == pytest.approx(40.0, rel=1e-14)
    assert chi_squared_p(big) < chi_squared_p(t)


def test_chi2_degenerate_margin():
    with pytest.raises(UndefinedRiskError):
        chi_squared_p(ContingencyTable2x2(0, 0, 5, 5))


def test_chi2_sf_matches_incomplete_gamma_small_margins():
    for a in range(1, 16):
        for b in range(1, 16):
            for c in range(1, 16):
                for d in range(1, 16, 2):
                    x = oracles.pearson_chi2(a, b, c, d)
                    p = chi_squared_p(ContingencyTable2x2(a, b, c, d))
                    assert abs(p - oracles.chi2_sf_1dof(x)) < 1e-9


def test_chi2_sf_extreme_tail():
    for x in (0.0, 1e-8, 0.5, 3.0, 50.0, 200.0, 700.0):
        assert float(chi2_sf_1dof(x)) == pytest.approx(oracles.chi2_sf_1dof(x), rel=1e-9, abs=1e-300)


@given(cells, cells, cells, cells, st.integers(min_value=2, max_value=20))
def test_rr_scale_invariance(a, b, c, d, k):
    t = ContingencyTable2x2(a, b, c, d)
    r1, r2 = relative_risk(t), relative_risk(t.scaled(k))
    assert r2.point == pytest.approx(r1.point, rel=1e-12)
    assert (r2.ci_high - r2.ci_low) < (r1.ci_high - r1.ci_low)
    assert r1.ci_low <= r1.point <= r1.ci_high


@given(cells, cells, cells, cells)
def test_chi2_invariant_under_row_and_column_swap(a, b, c, d):
    assert chi_squared_p(ContingencyTable2x2(a, b, c, d)) == \
        pytest.approx(chi_squared_p(ContingencyTable2x2(d, c, b, a)), rel=1e-12)


@given(st.floats(min_value=0, max_value=500), st.floats(min_value=0, max_value=500))
def test_chi2_sf_monotone(x, y):
    lo, hi = sorted((x, y))
    assert chi2_sf_1dof(lo) >= chi2_sf_1dof(hi)


def test_bh_hand_example():
    res = benjamini_hochberg(PValueSet([("a", 0.001), ("b", 0.02), ("c", 0.04), ("d", 0.06)], 0.05))
    assert res.rejected == {"a", "b"}


def test_bh_all_ones():
    res = benjamini_hochberg(PValueSet([(i, 1.0) for i in range(5)], 0.05))
    assert res.rejected == frozenset()
    assert all(q == 1.0 for q in res.q_values.values())


def test_bh_single_entry_at_alpha():
    assert benjamini_hochberg(PValueSet([("x", 0.009)], 0.01)).rejected == {"x"}


def test_bh_q_values_hand():
    _, q = bh_arrays([0.01, 0.04, 0.03], 0.05)
    # sorted 0.01, 0.03, 0.04 -> 0.03, 0.045, 0.04 -> cummin from the right
    assert q.tolist() == pytest.approx([0.03, 0.04, 0.04])


def test_pvalueset_validation():
    with pytest.raises(ValueError):
        PValueSet([("x", 1.5)], 0.05)
    with pytest.raises(ValueError):
        PValueSet([("x", 0.5)], 1.0)
    with pytest.raises(ValueError):
        benjamini_hochberg(PValueSet([], 0.05))


@settings(max_examples=300)
@given(st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=200),
       st.sampled_from([0.01, 0.05, 0.1]))
def test_bh_matches_bruteforce(p, alpha):
    reject, q = bh_arrays(p, alpha)
    assert set(np.flatnonzero(reject).tolist()) == oracles.bh_bruteforce(p, alpha)
    # downward closed in p order
    if reject.any():
        assert np.asarray(p)[~reject].min(initial=2.0) > np.asarray(p)[reject].max()
    assert ((q >= np.asarray(p) - 1e-15) & (q <= 1.0)).all()
    # q <= alpha reproduces the rejection set, up to rounding at the boundary
    assert (q[reject] <= alpha * (1 + 1e-12)).all()
    assert (q[~reject] > alpha * (1 - 1e-12)).all()


@given(st.lists(st.sampled_from([0.001, 0.004, 0.02, 0.5]), min_size=1, max_size=40))
def test_bh_ties_share_outcome(p):
    reject, _ = bh_arrays(p, 0.05)
    p = np.asarray(p)
    for value in np.unique(p):
        assert len(set(reject[p == value].tolist())) == 1
