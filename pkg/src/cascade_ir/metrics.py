"""Figures of merit for reconciliation runs and their ensemble aggregation.

All efficiencies of an ensemble are computed from the mean number of
disclosed bits, not averaged per frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

from scipy.stats import beta as _beta_dist

from .bitframe import UsageError

INF = math.inf


def binary_entropy(e: float) -> float:
    """Binary Shannon entropy in bits, with h(0) = h(1) = 0."""
    if not 0.0 <= e <= 1.0:
        raise UsageError(f"probability must lie in [0, 1], got {e}")
    if e == 0.0 or e == 1.0:
        return 0.0
    return -e * math.log2(e) - (1.0 - e) * math.log2(1.0 - e)


def f_ec(m: float, n: int, e: float) -> float:
    """Disclosed bits relative to the Shannon limit, ``m / (n h(e))``.

    Returns ``inf`` when ``h(e) == 0``.
    """
    if n < 1:
        raise UsageError("frame length must be >= 1")
    h = binary_entropy(e)
    return INF if h == 0.0 else (m / n) / h


def beta(m: float, n: int, e: float) -> float:
    """Fraction of the channel capacity kept by the rate ``R = 1 - m/n``.

    Returns ``nan`` when the capacity ``1 - h(e)`` vanishes.
    """
    if n < 1:
        raise UsageError("frame length must be >= 1")
    cap = 1.0 - binary_entropy(e)
    if cap <= 0.0:
        return math.nan
    return (1.0 - m / n) / cap


def leak_ec(fer: float, m: float, n: int) -> float:
    """Leakage ratio charging a failed frame as fully disclosed."""
    if not 0.0 <= fer <= 1.0:
        raise UsageError(f"frame error rate must lie in [0, 1], got {fer}")
    if n < 1:
        raise UsageError("frame length must be >= 1")
    return (1.0 - fer) * (m / n) + fer


def eta_ec(leak: float, e: float) -> float:
    """Leakage relative to ``h(e)``; ``inf`` when ``h(e) == 0``."""
    h = binary_entropy(e)
    return INF if h == 0.0 else leak / h


def clopper_pearson(k: int, trials: int, level: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval for ``k`` successes in ``trials``."""
    if trials < 1 or not 0 <= k <= trials:
        raise UsageError("need 0 <= k <= trials and trials >= 1")
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(_beta_dist.ppf(a / 2, k, trials - k + 1))
    hi = 1.0 if k == trials else float(_beta_dist.ppf(1 - a / 2, k + 1, trials - k))
    return lo, hi


def fer_upper_bound(k: int, trials: int, confidence: float = 0.95) -> float:
    """One-sided upper confidence bound on a failure probability."""
    if trials < 1 or not 0 <= k <= trials:
        raise UsageError("need 0 <= k <= trials and trials >= 1")
    if k == trials:
        return 1.0
    return float(_beta_dist.ppf(confidence, k + 1, trials - k))


@dataclass
class Tally:
    """Mergeable integer sums over simulated frames of one configuration.

    Integer sums keep merging exact, so pooling partial tallies from any
    number of workers gives the same report as one sequential run.
    """

    n: int
    frames: int = 0
    failures: int = 0
    sum_m: int = 0
    sum_m2: int = 0
    sum_rounds: int = 0
    sum_rounds2: int = 0
    sum_residual: int = 0
    sum_initial: int = 0
    pass_failures: list[int] = field(default_factory=list)

    def add(self, m: int, rounds: int, residual: int, initial: int = 0) -> None:
        self.frames += 1
        self.failures += residual > 0
        self.sum_m += m
        self.sum_m2 += m * m
        self.sum_rounds += rounds
        self.sum_rounds2 += rounds * rounds
        self.sum_residual += residual
        self.sum_initial += initial

    def merge(self, other: "Tally") -> "Tally":
        if other.n != self.n:
            raise UsageError(f"cannot merge tallies for n={self.n} and n={other.n}")
        pf = [a + b for a, b in _zip_longest(self.pass_failures, other.pass_failures)]
        return Tally(
            n=self.n,
            frames=self.frames + other.frames,
            failures=self.failures + other.failures,
            sum_m=self.sum_m + other.sum_m,
            sum_m2=self.sum_m2 + other.sum_m2,
            sum_rounds=self.sum_rounds + other.sum_rounds,
            sum_rounds2=self.sum_rounds2 + other.sum_rounds2,
            sum_residual=self.sum_residual + other.sum_residual,
            sum_initial=self.sum_initial + other.sum_initial,
            pass_failures=pf,
        )


def _zip_longest(a: list[int], b: list[int]):
    for i in range(max(len(a), len(b))):
        yield (a[i] if i < len(a) else 0), (b[i] if i < len(b) else 0)


def _mean_se(total: int, total_sq: int, count: int) -> tuple[float, float]:
    mean = total / count
    if count < 2:
        return mean, math.nan
    var = (total_sq - total * total / count) / (count - 1)
    return mean, math.sqrt(max(var, 0.0) / count)


CSV_COLUMNS = (
    "variant", "n", "p_init", "q", "frames", "mean_m", "mean_rounds", "fer",
    "fer_ci_high", "ber", "f_ec", "beta", "leak_ec", "eta_ec",
)


@dataclass(frozen=True)
class RunReport:
    """Aggregate metrics of one (schedule, n, p_init, q) configuration.

    ``se_*`` are standard errors of the means; ``fer_ci_high`` is the one-sided
    95% Clopper-Pearson upper bound on the frame error rate.
    """

    variant: str
    n: int
    p_init: float
    q_true: float
    frames_simulated: int
    failures: int
    mean_m: float
    se_m: float
    mean_rounds: float
    se_rounds: float
    fer: float
    fer_ci_high: float
    ber: float
    f_ec: float
    f_ec_se: float
    beta: float
    leak_ec: float
    eta_ec: float
    eta_ec_se: float
    mean_initial_errors: float = 0.0
    fer_after_pass: tuple[float, ...] = ()

    @classmethod
    def from_tally(cls, t: Tally, q_true: float, p_init: float, variant: str = "custom") -> "RunReport":
        if t.frames < 1:
            raise UsageError("cannot report on zero frames")
        n = t.n
        mean_m, se_m = _mean_se(t.sum_m, t.sum_m2, t.frames)
        mean_r, se_r = _mean_se(t.sum_rounds, t.sum_rounds2, t.frames)
        fer = t.failures / t.frames
        h = binary_entropy(q_true)
        leak = leak_ec(fer, mean_m, n)
        scale = INF if h == 0.0 else 1.0 / (n * h)
        return cls(
            variant=variant,
            n=n,
            p_init=p_init,
            q_true=q_true,
            frames_simulated=t.frames,
            failures=t.failures,
            mean_m=mean_m,
            se_m=se_m,
            mean_rounds=mean_r,
            se_rounds=se_r,
            fer=fer,
            fer_ci_high=fer_upper_bound(t.failures, t.frames),
            ber=t.sum_residual / (n * t.frames),
            f_ec=f_ec(mean_m, n, q_true),
            f_ec_se=se_m * scale if h else INF,
            beta=beta(mean_m, n, q_true),
            leak_ec=leak,
            eta_ec=eta_ec(leak, q_true),
            eta_ec_se=(1.0 - fer) * se_m * scale if h else INF,
            mean_initial_errors=t.sum_initial / t.frames,
            fer_after_pass=tuple(v / t.frames for v in t.pass_failures),
        )

    def csv_row(self) -> list[str]:
        vals = {
            "variant": self.variant, "n": self.n, "p_init": self.p_init, "q": self.q_true,
            "frames": self.frames_simulated, "mean_m": self.mean_m,
            "mean_rounds": self.mean_rounds, "fer": self.fer, "fer_ci_high": self.fer_ci_high,
            "ber": self.ber, "f_ec": self.f_ec, "beta": self.beta, "leak_ec": self.leak_ec,
            "eta_ec": self.eta_ec,
        }
        return [_fmt(vals[c]) for c in CSV_COLUMNS]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fer_after_pass"] = list(self.fer_after_pass)
        return {k: (_fmt(v) if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _fmt(v) -> str:
    """CSV cell; non-finite floats become the sentinels ``inf``, ``-inf`` and ``undefined``."""
    if isinstance(v, float):
        if math.isnan(v):
            return "undefined"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def tally_outcomes(outcomes: Iterable, n: int | None = None) -> Tally:
    outs = list(outcomes)
    if not outs:
        raise UsageError("aggregate needs at least one outcome")
    n0 = outs[0].corrected_frame.size if n is None else n
    t = Tally(n=n0)
    for o in outs:
        if o.corrected_frame.size != n0:
            raise UsageError("outcomes of different frame lengths cannot be aggregated")
        t.add(o.m, o.rounds, o.residual_errors, o.initial_errors)
    return t


def aggregate(outcomes: Iterable, q_true: float, p_init: float, variant: str = "custom") -> RunReport:
    """Pool reconciliation outcomes of one configuration into a :class:`RunReport`."""
    return RunReport.from_tally(tally_outcomes(outcomes), q_true, p_init, variant)


def report_field_names() -> list[str]:
    return [f.name for f in fields(RunReport)]
