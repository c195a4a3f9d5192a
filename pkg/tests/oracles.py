"""Reference implementations used only by the tests.

Each oracle takes a different code path from the library: plain Python
loops, no numpy vectorisation and no shared helpers.
"""
import math


def gammaincc_half(x, eps=1e-16, max_iter=10000):
    """Regularised upper incomplete gamma Q(1/2, x).

    Series expansion below x < 1.5, modified Lentz continued fraction above
    (the classic split at x = a + 1).
    """
    a = 0.5
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return 1.0
    gln = math.lgamma(a)
    if x < a + 1.0:
        ap, total, delta = a, 1.0 / a, 1.0 / a
        for _ in range(max_iter):
            ap += 1.0
            delta *= x / ap
            total += delta
            if abs(delta) < abs(total) * eps:
                break
        return 1.0 - total * math.exp(-x + a * math.log(x) - gln)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return math.exp(-x + a * math.log(x) - gln) * h


def chi2_sf_1dof(stat):
    """P(X > stat) for one degree of freedom: Q(1/2, stat/2)."""
    return gammaincc_half(stat / 2.0)


def pearson_chi2(a, b, c, d):
    n = a + b + c + d
    return n * (a * d - b * c) ** 2 / ((a + b) * (c + d) * (a + c) * (b + d))


def katz_rr(a, b, c, d, z=1.96):
    point = (a / (a + b)) / (c / (c + d))
    se = math.sqrt(1 / a - 1 / (a + b) + 1 / c - 1 / (c + d))
    return point, math.exp(math.log(point) - z * se), math.exp(math.log(point) + z * se)


def bh_bruteforce(pvalues, alpha):
    """Indices rejected by BH, found by testing every candidate k."""
    m = len(pvalues)
    ordered = sorted(pvalues)
    best_k = 0
    for k in range(1, m + 1):
        if ordered[k - 1] <= k / m * alpha:
            best_k = k
    if best_k == 0:
        return set()
    cutoff = ordered[best_k - 1]
    return {i for i, p in enumerate(pvalues) if p <= cutoff}


def year_pair_counts_bruteforce(records, index_codes, x, sex, t1, t2, max_age=None, ref_year=None):
    """The six lead/lag counts by walking patient records one at a time."""
    out = dict(m_t2=0, m_t1=0, lead_t2=0, lead_t1=0, lag_t2=0, lag_t1=0)
    for rec in records:
        if rec.sex != sex:
            continue
        if max_age is not None and ref_year - rec.birth_year >= max_age:
            continue
        d_years = {ev.year for ev in rec.diagnoses if ev.code in index_codes}
        x_years = {ev.year for ev in rec.diagnoses if ev.code == x}
        d1, d2 = t1 in d_years, t2 in d_years
        x1, x2 = t1 in x_years, t2 in x_years
        if d2 and x2:
            out["m_t2"] += 1
            if d1 and not x1:
                out["lead_t2"] += 1
            if x1 and not d1:
                out["lag_t2"] += 1
        if d1 and x1:
            out["m_t1"] += 1
            if d2 and not x2:
                out["lead_t1"] += 1
            if x2 and not d2:
                out["lag_t1"] += 1
    return out
