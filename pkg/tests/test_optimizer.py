import math

import pytest
from hypothesis import given, strategies as st

from cascade_ir.bitframe import UsageError
from cascade_ir.optimizer import (
    EtaObjective,
    compass_search,
    pow2_compass_search,
    power_of_two_sweep,
    write_history,
)


def quadratic(a, b):
    return lambda p: float((p[0] - a) ** 2 + (p[1] - b) ** 2)


@given(a=st.integers(1, 200), b=st.integers(1, 400), x0=st.integers(1, 200), y0=st.integers(1, 400))
def test_compass_reaches_integer_minimum_of_convex_quadratic(a, b, x0, y0):
    res = compass_search(quadratic(a, b), (x0, y0), delta0=max(1, x0 // 2), budget=10_000)
    assert res.best == (a, b)
    assert res.best_eta == 0.0


def test_step_shrinks_by_a_fifth():
    res = compass_search(quadratic(17, 42), (17, 42), delta0=50, budget=10_000)
    assert res.deltas[:3] == (50, 40, 32)
    assert res.best == (17, 42)
    assert res.deltas[-1] < 1.0


@given(a=st.integers(1, 60), b=st.integers(1, 60), x0=st.integers(1, 60), y0=st.integers(1, 60),
       noise=st.integers(0, 2**16))
def test_best_value_never_increases(a, b, x0, y0, noise):
    def bumpy(p):
        return (p[0] - a) ** 2 + (p[1] - b) ** 2 + ((p[0] * 7919 + p[1] * 104729 + noise) % 13)

    res = compass_search(bumpy, (x0, y0), delta0=10, budget=500, upper=100)
    values = [v for _, v, _ in res.trajectory]
    assert all(v2 <= v1 for v1, v2 in zip(values, values[1:]))
    deltas = [d for _, _, d in res.trajectory]
    assert all(d2 <= d1 for d1, d2 in zip(deltas, deltas[1:]))
    assert res.best_eta == min(h.eta for h in res.history)


def test_probes_outside_bounds_are_skipped():
    seen = []

    def obj(p):
        seen.append(p)
        return float(p[0] + p[1])

    res = compass_search(obj, (1, 1), delta0=4, budget=100, lower=1, upper=6)
    assert all(1 <= v <= 6 for p in seen for v in p)
    assert res.best == (1, 1)


def test_probe_order_breaks_ties():
    # every neighbour improves equally; the first probe (k1 + delta) wins
    res = compass_search(lambda p: 0.0 if p != (10, 10) else 1.0, (10, 10), delta0=2, budget=5)
    assert res.trajectory[1][0] == (12, 10)


def test_budget_caps_distinct_evaluations():
    calls = []
    res = compass_search(lambda p: calls.append(p) or float(sum(p)), (50, 50), delta0=5, budget=7)
    assert len(calls) == res.evaluations <= 7
    assert len(set(calls)) == len(calls)


def test_compass_argument_checks():
    with pytest.raises(UsageError):
        compass_search(quadratic(1, 1), (1, 1), delta0=0)
    with pytest.raises(UsageError):
        compass_search(quadratic(1, 1), (0, 1), delta0=1)


def test_pow2_compass_walks_exponents():
    res = pow2_compass_search(lambda s: abs(math.log2(s[0]) - 6) + abs(math.log2(s[1]) - 9), (3, 12), budget=200)
    assert res.best == (64, 512)
    assert all(all(v & (v - 1) == 0 for v in h.point) for h in res.history)


def test_sweep_ranks_every_candidate():
    entries = power_of_two_sweep(lambda s: (abs(s[0] - 16) + abs(s[1] - 256), 0.1, 5), [[3, 4, 5], [7, 8, 9]])
    assert len(entries) == 9
    assert entries[0].sizes == (16, 256)
    assert [e.eta for e in entries] == sorted(e.eta for e in entries)
    assert entries[0].se == 0.1 and entries[0].frames == 5


def test_single_candidate_sweep():
    entries = power_of_two_sweep(lambda s: 1.5, [[4], [8], [12]])
    assert [e.sizes for e in entries] == [(16, 256, 4096)]


def test_sweep_needs_candidates():
    with pytest.raises(UsageError):
        power_of_two_sweep(lambda s: 0.0, [[3], []])


def test_eta_objective_is_reproducible(tmp_path):
    a = EtaObjective(0.05, 2048, frames=60, master_seed=4, passes=8)
    b = EtaObjective(0.05, 2048, frames=60, master_seed=4, passes=8)
    grid = [[3, 4], [6, 7]]
    ra, rb = power_of_two_sweep(a, grid), power_of_two_sweep(b, grid)
    assert ra == rb
    assert all(e.frames == 60 and e.se > 0 for e in ra)
    assert a.schedule((16, 128)).k == (16, 128) + (1024,) * 6
    assert a((0, 4))[0] == math.inf
    res = compass_search(a, (20, 40), delta0=20, budget=6, upper=2048)
    write_history(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "candidate,eta_ec,eta_ec_se,frames"
    assert len(lines) == 1 + res.evaluations
    assert lines[1].startswith("20x40,")


@pytest.mark.slow
def test_pow2_compass_at_two_percent():
    obj = EtaObjective(0.02, 2**14, frames=2_000, master_seed=1, passes=14)
    res = pow2_compass_search(obj, (5, 6), budget=40)
    assert res.best[0] == 64
    assert res.best[1] in (256, 512)


@pytest.mark.slow
def test_powers_of_two_beat_their_neighbours_on_average():
    obj = EtaObjective(0.02, 2**14, frames=2_000, master_seed=3, passes=14)
    base = obj((64, 512))[0]
    others = [obj((k, 512))[0] for k in (56, 60, 62, 66, 68, 72)]
    assert sum(others) / len(others) >= base
