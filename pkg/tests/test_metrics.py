import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cascade_ir.bitframe import UsageError
from cascade_ir.metrics import (
    CSV_COLUMNS,
    RunReport,
    Tally,
    aggregate,
    beta,
    binary_entropy,
    clopper_pearson,
    eta_ec,
    f_ec,
    fer_upper_bound,
    leak_ec,
)
from cascade_ir.protocol import reconcile
from cascade_ir.channel import frame_pair
from cascade_ir.schedules import custom_schedule

rates = st.floats(1e-4, 0.45)


def _entropy_decimal(e: str) -> float:
    getcontext().prec = 50
    p = Decimal(e)
    ln2 = Decimal(2).ln()
    return float(-(p * p.ln() + (1 - p) * (1 - p).ln()) / ln2)


# -- entropy ------------------------------------------------------------------


def test_entropy_trivial_points():
    assert binary_entropy(0.5) == 1.0
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(1.0) == 0.0


@pytest.mark.parametrize("e", ["0.02", "0.01", "0.05", "0.11", "0.3"])
def test_entropy_matches_high_precision(e):
    assert binary_entropy(float(e)) == pytest.approx(_entropy_decimal(e), rel=1e-14)


def test_entropy_at_two_percent():
    assert binary_entropy(0.02) == pytest.approx(0.141441, abs=5e-7)


@pytest.mark.parametrize("e", [-0.01, 1.5, math.nan])
def test_entropy_rejects_non_probabilities(e):
    with pytest.raises(UsageError):
        binary_entropy(e)


# -- f_EC, beta -------------------------------------------------------------------


@given(e=rates, n=st.integers(1, 10**6))
def test_perfect_disclosure_gives_unit_efficiency(e, n):
    m = n * binary_entropy(e)
    assert f_ec(m, n, e) == pytest.approx(1.0, rel=1e-12)
    assert beta(m, n, e) == pytest.approx(1.0, rel=1e-12)


def test_full_disclosure():
    assert f_ec(1000, 1000, 0.03) == pytest.approx(1 / binary_entropy(0.03))


def test_zero_error_rate_sentinels():
    assert f_ec(10, 100, 0.0) == math.inf
    assert eta_ec(0.1, 0.0) == math.inf
    assert math.isnan(beta(10, 100, 0.5))


@given(m=st.integers(0, 10**6), n=st.integers(1, 10**6), e=rates)
def test_capacity_identity(m, n, e):
    m = min(m, n)
    h = binary_entropy(e)
    assert 1 - f_ec(m, n, e) * h == pytest.approx(beta(m, n, e) * (1 - h), abs=1e-12)


def test_beta_from_published_efficiency_at_one_percent():
    # f_EC = 1.04219 at q = 1% corresponds to beta = 0.9963
    m_over_n = 1.04219 * binary_entropy(0.01)
    assert beta(m_over_n * 10**6, 10**6, 0.01) == pytest.approx(0.9963, abs=5e-5)


# -- leakage, eta ----------------------------------------------------------------


def test_leak_examples():
    assert leak_ec(0.0, 100, 1000) == pytest.approx(0.1)
    assert leak_ec(1.0, 100, 1000) == 1.0
    assert leak_ec(1e-3, 100, 1000) == pytest.approx(0.1009, rel=1e-12)


@given(f1=st.floats(0, 1), f2=st.floats(0, 1), m=st.integers(0, 999))
def test_leak_is_monotone_in_fer(f1, f2, m):
    lo, hi = sorted((f1, f2))
    assert leak_ec(lo, m, 1000) <= leak_ec(hi, m, 1000)


def test_leak_rejects_bad_fer():
    with pytest.raises(UsageError):
        leak_ec(1.2, 1, 10)


@given(e=rates, m=st.integers(0, 10**5))
def test_eta_equals_f_without_failures(e, m):
    n = 10**5
    assert eta_ec(leak_ec(0.0, m, n), e) == pytest.approx(f_ec(m, n, e), rel=1e-12)


def test_eta_from_published_row_at_two_percent():
    # f_EC = 1.04006 and FER 9.3e-5 at q = 2% give eta_EC = 1.04062
    n = 10**6
    m = 1.04006 * n * binary_entropy(0.02)
    assert eta_ec(leak_ec(9.3e-5, m, n), 0.02) == pytest.approx(1.04062, abs=1e-5)


# -- confidence bounds -----------------------------------------------------------


def test_clopper_pearson_known_values():
    # zero failures: the two-sided 95% upper bound is 1 - 0.025^(1/n)
    lo, hi = clopper_pearson(0, 100)
    assert lo == 0.0
    assert hi == pytest.approx(1 - 0.025 ** (1 / 100), rel=1e-9)
    # one-sided: rule of three region
    assert fer_upper_bound(0, 10**4) == pytest.approx(1 - 0.05 ** (1e-4), rel=1e-9)


@given(k=st.integers(0, 50), extra=st.integers(0, 500))
def test_clopper_pearson_brackets_estimate(k, extra):
    n = k + extra + 1
    lo, hi = clopper_pearson(k, n)
    assert lo <= k / n <= hi
    assert fer_upper_bound(k, n) <= hi + 1e-12


# -- aggregation -------------------------------------------------------------------


def _random_tally(rng, n, frames):
    t = Tally(n=n)
    for _ in range(frames):
        resid = int(rng.integers(0, 3)) if rng.random() < 0.1 else 0
        t.add(int(rng.integers(1000, 2000)), int(rng.integers(20, 60)), resid, int(rng.integers(0, 300)))
    t.pass_failures = [int(v) for v in rng.integers(0, frames + 1, size=int(rng.integers(1, 5)))]
    return t


@given(seed=st.integers(0, 2**32 - 1), a=st.integers(1, 40), b=st.integers(1, 40))
def test_merge_equals_pooled(seed, a, b):
    rng = np.random.default_rng(seed)
    n = 10_000
    ta, tb = _random_tally(rng, n, a), _random_tally(rng, n, b)
    pooled = Tally(n=n)
    for t in (ta, tb):
        for field in ("frames", "failures", "sum_m", "sum_m2", "sum_rounds", "sum_rounds2",
                      "sum_residual", "sum_initial"):
            setattr(pooled, field, getattr(pooled, field) + getattr(t, field))
    width = max(len(ta.pass_failures), len(tb.pass_failures))
    pooled.pass_failures = [
        (ta.pass_failures + [0] * width)[i] + (tb.pass_failures + [0] * width)[i] for i in range(width)
    ]
    merged = ta.merge(tb)
    assert merged == pooled
    assert RunReport.from_tally(merged, 0.03, 0.03) == RunReport.from_tally(pooled, 0.03, 0.03)
    assert ta.merge(tb) == tb.merge(ta)


def test_merge_refuses_different_lengths():
    with pytest.raises(UsageError):
        Tally(n=10).merge(Tally(n=20))


def test_counted_fer():
    t = Tally(n=100)
    for i in range(10_000):
        t.add(20, 3, 2 if i < 3 else 0)
    rep = RunReport.from_tally(t, 0.02, 0.02)
    assert rep.fer == pytest.approx(3e-4)
    assert rep.ber == pytest.approx(6 / (100 * 10_000))


def test_identical_outcomes_give_deterministic_efficiency():
    t = Tally(n=1000)
    for _ in range(5):
        t.add(150, 10, 0)
    rep = RunReport.from_tally(t, 0.02, 0.02)
    assert rep.se_m == 0.0
    assert rep.f_ec == f_ec(150, 1000, 0.02)
    assert rep.eta_ec == rep.f_ec


def test_aggregate_of_outcomes():
    n = 2048
    sched = custom_schedule([36, 72, 144, 288], n, reuse_subblocks=False)
    outs = []
    for seed in range(20):
        x, y = frame_pair(n, 0.02, seed)
        outs.append(reconcile(x, y, sched, seed))
    rep = aggregate(outs, 0.02, 0.02, "custom")
    assert rep.frames_simulated == 20
    assert rep.mean_m == pytest.approx(np.mean([o.m for o in outs]))
    assert rep.fer == sum(not o.success for o in outs) / 20
    h = binary_entropy(0.02)
    assert 1 - rep.f_ec * h == pytest.approx(rep.beta * (1 - h), abs=1e-9)
    if rep.fer == 0:
        assert rep.f_ec >= 1


def test_aggregate_of_nothing_is_an_error():
    with pytest.raises(UsageError):
        aggregate([], 0.02, 0.02)


def test_csv_row_and_sentinels():
    t = Tally(n=100)
    t.add(10, 2, 0)
    rep = RunReport.from_tally(t, 0.0, 0.02)
    row = dict(zip(CSV_COLUMNS, rep.csv_row()))
    assert row["f_ec"] == "inf"
    assert row["eta_ec"] == "inf"
    assert len(rep.csv_row()) == len(CSV_COLUMNS)
    assert rep.to_dict()["f_ec"] == "inf"
