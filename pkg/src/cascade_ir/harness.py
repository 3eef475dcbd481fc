"""Monte-Carlo experiments: frame generation, reconciliation and aggregation.

Frame ``f`` of the grid point with true QBER ``q`` is generated from
``derive_seed(master_seed, point_key(q), f)``; the protocol seed is
``splitmix64`` of that value.  Frames therefore depend only on the master
seed, ``q`` and the frame index, never on worker count, chunking or the
order of the grid, and different schedules evaluated at the same ``q`` see
the same frames (common random numbers).
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .bitframe import UsageError
from .channel import flip_threshold, frame_pair
from .metrics import CSV_COLUMNS, RunReport, Tally
from .protocol import _kernel as K
from .protocol.session import ReconcileOutcome, reconcile
from .rng import GENERATOR_ID, derive_seed, splitmix64
from .schedules import BlockSchedule, ScheduleError, ScheduleRequest, build_schedule

QBER_MAX = 0.11
DEFAULT_CHUNK = 500


def point_key(q: float) -> int:
    """Integer key of a QBER grid point (QBER in units of 1e-6)."""
    return int(round(q * 1_000_000))


def frame_seed(master_seed: int, q: float, index: int) -> int:
    return derive_seed(master_seed, point_key(q), index)


@dataclass(frozen=True)
class Experiment:
    """A grid of simulations sharing one variant (or custom schedule) and frame length.

    ``p_init=None`` sizes every point's schedule from its own QBER; a fixed
    ``p_init`` gives the rateless setting where the schedule is built once
    and the channel QBER varies.
    """

    variant: str
    n: int
    q_grid: tuple[float, ...]
    p_init: float | None = None
    frames_per_point: int = 10_000
    master_seed: int = 1
    passes: int | None = None
    schedule: BlockSchedule | None = None
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        object.__setattr__(self, "q_grid", tuple(float(q) for q in self.q_grid))
        if self.frames_per_point < 1:
            raise UsageError("frames per point must be >= 1")
        if self.chunk < 1:
            raise UsageError("chunk size must be >= 1")
        if not self.q_grid:
            raise UsageError("the QBER grid is empty")
        for q in self.q_grid:
            # q = 0 only makes sense when the schedule does not depend on it
            lo_ok = q > 0 or (q == 0 and (self.p_init is not None or self.schedule is not None))
            if not (lo_ok and q <= QBER_MAX):
                raise UsageError(f"QBER {q} outside the studied range (0, {QBER_MAX}]")
        if self.schedule is None and self.variant == "custom":
            raise UsageError("variant 'custom' needs an explicit schedule")
        if self.schedule is not None and self.schedule.n != self.n:
            raise UsageError(f"schedule is for n={self.schedule.n}, experiment has n={self.n}")
        # surface schedule errors before any simulation starts
        for q in self.q_grid:
            self.schedule_for(q)

    def schedule_for(self, q: float) -> BlockSchedule:
        if self.schedule is not None:
            sched = self.schedule
        else:
            p = self.p_init if self.p_init is not None else q
            sched = build_schedule(ScheduleRequest(self.variant, p, self.n))
        if self.passes is not None:
            sched = sched.with_passes(self.passes)
        return sched

    def p_for(self, q: float) -> float:
        if self.p_init is not None:
            return self.p_init
        if self.schedule is not None and self.schedule.p is not None:
            return self.schedule.p
        return q

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q_grid"] = list(self.q_grid)
        d["schedule"] = None if self.schedule is None else self.schedule.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Experiment":
        d = dict(d)
        if d.get("schedule") is not None:
            d["schedule"] = BlockSchedule.from_dict(d["schedule"])
        d["q_grid"] = tuple(d["q_grid"])
        return cls(**d)


# ---------------------------------------------------------------------------
# workers

_WS_CACHE: dict[str, K.Workspace] = {}


def _workspace(sched: BlockSchedule) -> K.Workspace:
    key = sched.to_json()
    ws = _WS_CACHE.get(key)
    if ws is None:
        if len(_WS_CACHE) > 8:
            _WS_CACHE.clear()
        ws = K.allocate(
            sched.n,
            sched.k,
            sched.reuse_subblocks,
            sched.discard_singletons,
            sched.shuffle_mode == "constrained-random",
            sched.biconf_s or 0,
            False,
        )
        _WS_CACHE[key] = ws
    return ws


def _run_chunk(job: tuple[str, float, int, int, int]) -> Tally:
    sched_json, q, master, first, count = job
    sched = BlockSchedule.from_json(sched_json)
    return simulate_frames(sched, q, master, first, count)


def simulate_frames(sched: BlockSchedule, q: float, master_seed: int, first: int, count: int) -> Tally:
    """Reconcile frames ``first .. first+count-1`` of grid point ``q`` in-process."""
    ws = _workspace(sched)
    T = len(sched.k)
    slots = T + 1
    m = np.zeros(count, np.int64)
    rounds = np.zeros(count, np.int64)
    resid = np.zeros(count, np.int64)
    err0 = np.zeros(count, np.int64)
    pass_fail = np.zeros(slots, np.int64)
    pass_m = np.zeros(slots, np.int64)
    pass_rounds = np.zeros(slots, np.int64)
    K.simulate_batch(
        ws, np.uint64(master_seed & ((1 << 64) - 1)), np.uint64(point_key(q)),
        np.uint64(first), count, np.uint64(flip_threshold(q)),
        m, rounds, resid, err0, pass_fail, pass_m, pass_rounds,
    )
    m_ = [int(v) for v in m]
    r_ = [int(v) for v in rounds]
    last = slots if sched.biconf_s else T
    return Tally(
        n=sched.n,
        frames=count,
        failures=int(np.count_nonzero(resid)),
        sum_m=sum(m_),
        sum_m2=sum(v * v for v in m_),
        sum_rounds=sum(r_),
        sum_rounds2=sum(v * v for v in r_),
        sum_residual=int(resid.sum()),
        sum_initial=int(err0.sum()),
        pass_failures=[int(v) for v in pass_fail[:last]],
    )


def replay_frame(sched: BlockSchedule, q: float, master_seed: int, index: int,
                 transcript: bool = False) -> ReconcileOutcome:
    """Re-run one simulated frame through the session API (same frames, same seed)."""
    fseed = frame_seed(master_seed, q, index)
    x, y = frame_pair(sched.n, q, fseed)
    return reconcile(x, y, sched, splitmix64(fseed), transcript=transcript)


def _map(jobs: list, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [_run_chunk(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(_run_chunk, jobs))


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def run_point(sched: BlockSchedule, q: float, frames: int, master_seed: int,
              workers: int = 1, chunk: int = DEFAULT_CHUNK) -> Tally:
    """Tally ``frames`` reconciliations of one schedule at true QBER ``q``."""
    jobs = [(sched.to_json(), q, master_seed, f, min(chunk, frames - f))
            for f in range(0, frames, chunk)]
    total = Tally(n=sched.n)
    for t in _map(jobs, workers):
        total = total.merge(t)
    return total


def run_experiment(exp: Experiment, workers: int = 1,
                   progress: Callable[[RunReport], None] | None = None) -> list[RunReport]:
    """Simulate every grid point; results do not depend on ``workers``."""
    reports = []
    for q in exp.q_grid:
        sched = exp.schedule_for(q)
        t = run_point(sched, q, exp.frames_per_point, exp.master_seed, workers, exp.chunk)
        rep = RunReport.from_tally(t, q, exp.p_for(q), sched.variant)
        reports.append(rep)
        if progress is not None:
            progress(rep)
    return reports


def rateless_sweep(p_init: float, q_grid: Sequence[float], variant: str = "original",
                   n: int = 10_000, frames: int = 10_000, master_seed: int = 1,
                   workers: int = 1) -> list[RunReport]:
    """Fixed schedule built from ``p_init``, channel QBER swept over ``q_grid``."""
    exp = Experiment(variant, n, tuple(q_grid), p_init=p_init,
                     frames_per_point=frames, master_seed=master_seed)
    return run_experiment(exp, workers)


def qber_grid(spec: str) -> tuple[float, ...]:
    """Parse ``start:stop:step`` (stop inclusive) or a comma list into QBER values."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {spec!r} is not start:stop:step")
        start, stop, step = (float(v) for v in parts)
        if step <= 0:
            raise UsageError("grid step must be positive")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        if count < 1:
            raise UsageError(f"grid {spec!r} is empty")
        return tuple(round(start + i * step, 10) for i in range(count))
    return tuple(float(v) for v in spec.split(",") if v.strip())


# ---------------------------------------------------------------------------
# output


def provenance(seed: int, extra: dict | None = None) -> dict:
    d = {"package": "cascade-ir", "version": __version__, "master_seed": seed,
         "generator": GENERATOR_ID}
    if extra:
        d.update(extra)
    return d


def reports_csv(reports: Sequence[RunReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def write_reports(reports: Sequence[RunReport], csv_path: str | Path | None,
                  json_path: str | Path | None, meta: dict) -> None:
    if csv_path is not None:
        Path(csv_path).write_text(reports_csv(reports))
    if json_path is not None:
        doc = {"meta": meta, "reports": [r.to_dict() for r in reports]}
        Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


__all__ = [
    "Experiment",
    "ScheduleError",
    "frame_seed",
    "point_key",
    "qber_grid",
    "rateless_sweep",
    "replay_frame",
    "reports_csv",
    "run_experiment",
    "run_point",
    "simulate_frames",
    "write_reports",
]
