"""Compass search and power-of-two sweeps over Cascade block sizes.

The objective is the FER-penalised efficiency eta_EC estimated by Monte-Carlo
simulation.  Every candidate is simulated on the same frames (same master
seed and QBER), so comparisons between candidates are paired.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .bitframe import UsageError
from .harness import DEFAULT_CHUNK, run_point
from .metrics import RunReport
from .schedules import BlockSchedule

Point = tuple[int, ...]
Objective = Callable[[Point], float]


@dataclass(frozen=True)
class Evaluation:
    point: Point
    eta: float
    se: float = math.nan
    frames: int = 0


@dataclass
class CompassState:
    current: Point
    delta: float
    best_eta: float
    evaluations: list[Evaluation] = field(default_factory=list)


@dataclass(frozen=True)
class CompassResult:
    best: Point
    best_eta: float
    deltas: tuple[float, ...]
    history: tuple[Evaluation, ...]
    evaluations: int
    trajectory: tuple[tuple[Point, float, float], ...] = ()


def _as_eval(point: Point, value) -> Evaluation:
    if isinstance(value, Evaluation):
        return value
    if isinstance(value, tuple):
        eta, se, frames = (tuple(value) + (math.nan, 0))[:3]
        return Evaluation(point, float(eta), float(se), int(frames))
    return Evaluation(point, float(value))


def compass_search(
    objective: Objective,
    init: Sequence[int],
    delta0: float,
    budget: int = 200,
    min_delta: float = 1.0,
    lower: int = 1,
    upper: int | None = None,
) -> CompassResult:
    """Minimise ``objective`` over integer points by compass (N/S/E/W) search.

    Each iteration probes ``x ± delta`` along every coordinate, in the order
    first coordinate up, first down, second up, second down, and so on.  The
    best strictly improving probe becomes the new point (earlier probes win
    ties); if none improves, ``delta`` shrinks to ``4*delta/5``.

    Parameters
    ----------
    objective : callable
        Maps a tuple of ints to a value to minimise, or to ``(value, se, frames)``.
        Must be deterministic: repeated points are served from a cache.
    init : sequence of int
        Starting point.
    delta0 : float
        Initial step; probes move by ``round(delta)`` (at least 1).
    budget : int
        Maximum number of distinct objective evaluations.
    min_delta : float
        Stop once ``delta`` drops below this value.
    lower, upper : int
        Probes outside ``[lower, upper]`` are skipped.

    Returns
    -------
    CompassResult
        ``trajectory`` holds ``(point, best value, delta)`` after every iteration.
    """
    if delta0 <= 0:
        raise UsageError("initial step must be positive")
    if budget < 1:
        raise UsageError("budget must allow at least one evaluation")
    cache: dict[Point, Evaluation] = {}
    history: list[Evaluation] = []

    def evaluate(p: Point) -> Evaluation | None:
        if p in cache:
            return cache[p]
        if len(cache) >= budget:
            return None
        ev = _as_eval(p, objective(p))
        cache[p] = ev
        history.append(ev)
        return ev

    x = tuple(int(v) for v in init)
    if any(v < lower or (upper is not None and v > upper) for v in x):
        raise UsageError(f"initial point {x} outside [{lower}, {upper}]")
    state = CompassState(current=x, delta=float(delta0), best_eta=evaluate(x).eta)
    deltas = [state.delta]
    path = [(state.current, state.best_eta, state.delta)]
    while state.delta >= min_delta and len(cache) < budget:
        step = max(1, int(round(state.delta)))
        best_p, best_v = None, state.best_eta
        for i, sign in itertools.product(range(len(x)), (1, -1)):
            p = list(state.current)
            p[i] += sign * step
            p = tuple(p)
            if p[i] < lower or (upper is not None and p[i] > upper):
                continue
            ev = evaluate(p)
            if ev is None:
                break
            if ev.eta < best_v:
                best_p, best_v = p, ev.eta
        if best_p is not None:
            state.current, state.best_eta = best_p, best_v
        else:
            state.delta = 4.0 * state.delta / 5.0
            deltas.append(state.delta)
        path.append((state.current, state.best_eta, state.delta))
    state.evaluations = history
    return CompassResult(state.current, state.best_eta, tuple(deltas), tuple(history), len(cache),
                         tuple(path))


def pow2_compass_search(objective: Objective, init_exponents: Sequence[int], budget: int = 100,
                        max_exponent: int | None = None) -> CompassResult:
    """Compass search restricted to power-of-two sizes.

    Works on exponents with unit steps, so it stops at the first point none
    of whose neighbours (each size doubled or halved) improves.
    """
    def on_exponents(e: Point):
        return objective(tuple(2 ** v for v in e))

    res = compass_search(on_exponents, init_exponents, 1.0, budget, 1.0, 0, max_exponent)
    hist = tuple(Evaluation(tuple(2 ** v for v in h.point), h.eta, h.se, h.frames) for h in res.history)
    path = tuple((tuple(2 ** v for v in p), b, d) for p, b, d in res.trajectory)
    return CompassResult(tuple(2 ** v for v in res.best), res.best_eta, res.deltas, hist, res.evaluations, path)


@dataclass(frozen=True)
class SweepEntry:
    sizes: Point
    eta: float
    se: float
    frames: int


def power_of_two_sweep(
    objective: Objective,
    exponents: Sequence[Sequence[int]],
) -> list[SweepEntry]:
    """Evaluate every combination of power-of-two sizes; best (lowest eta) first.

    ``exponents[i]`` lists the candidate exponents of the ``i``-th block size.
    Ties are broken by the sizes themselves, so the ranking is reproducible.
    """
    if not exponents or any(len(e) == 0 for e in exponents):
        raise UsageError("every block size needs at least one candidate exponent")
    out = []
    for combo in itertools.product(*exponents):
        sizes = tuple(2 ** int(e) for e in combo)
        ev = _as_eval(sizes, objective(sizes))
        out.append(SweepEntry(sizes, ev.eta, ev.se, ev.frames))
    out.sort(key=lambda e: (e.eta, e.sizes))
    return out


class EtaObjective:
    """Monte-Carlo estimate of eta_EC for leading block sizes at one QBER.

    The schedule uses the given sizes for the first passes, then ``ceil(n/2)``
    up to ``passes`` passes in total, with block reuse.

    Parameters
    ----------
    q : float
        True QBER of the simulated channel.
    n : int
        Frame length.
    frames : int
        Frames per evaluation.
    master_seed : int
        Common seed: every candidate sees the same frames.
    passes : int
        Total passes.
    workers : int
        Worker processes used per evaluation.
    """

    def __init__(self, q: float, n: int, frames: int = 10_000, master_seed: int = 1,
                 passes: int = 14, workers: int = 1, chunk: int = DEFAULT_CHUNK):
        self.q = q
        self.n = n
        self.frames = frames
        self.master_seed = master_seed
        self.passes = passes
        self.workers = workers
        self.chunk = chunk
        self.reports: dict[Point, RunReport] = {}

    def schedule(self, sizes: Point) -> BlockSchedule:
        lead = list(sizes)
        rest = [(self.n + 1) // 2] * max(0, self.passes - len(lead))
        return BlockSchedule(k=tuple(lead + rest)[: self.passes], n=self.n, variant="custom",
                             p=self.q, reuse_subblocks=True)

    def __call__(self, sizes: Point) -> tuple[float, float, int]:
        sizes = tuple(int(s) for s in sizes)
        if any(not 1 <= s <= self.n for s in sizes):
            return math.inf, math.nan, 0
        if sizes not in self.reports:
            t = run_point(self.schedule(sizes), self.q, self.frames, self.master_seed,
                          self.workers, self.chunk)
            self.reports[sizes] = RunReport.from_tally(t, self.q, self.q, "custom")
        r = self.reports[sizes]
        return r.eta_ec, r.eta_ec_se, r.frames_simulated


def write_history(history: Sequence[Evaluation], path: str | Path) -> None:
    """CSV of evaluated candidates: sizes, eta_ec, standard error, frames."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate", "eta_ec", "eta_ec_se", "frames"])
        for h in history:
            w.writerow(["x".join(str(v) for v in h.point), repr(h.eta), repr(h.se), h.frames])
