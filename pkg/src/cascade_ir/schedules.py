"""Block-size schedules for the original protocol and its variants."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

VARIANTS = (
    "original",
    "mod1",
    "opt2",
    "opt3",
    "opt4",
    "opt5",
    "opt6",
    "opt7",
    "opt8",
    "opt8-formula",
    "opt8-table",
    "custom",
)

SHUFFLE_MODES = ("random", "constrained-random")

OPT8_FRAME_LENGTH = 2**14

# Optimised (k1, k2, k3) per QBER for n = 2**14, from the power-of-two compass search table.
OPT8_TABLE: dict[float, tuple[int, int, int]] = {
    0.005: (256, 1024, 4096),
    0.01: (128, 512, 4096),
    0.02: (64, 512, 4096),
    0.03: (32, 512, 4096),
    0.04: (32, 256, 4096),
    0.05: (16, 256, 4096),
    0.06: (16, 256, 4096),
    0.07: (16, 256, 4096),
    0.08: (8, 256, 4096),
    0.09: (8, 256, 4096),
    0.10: (8, 256, 4096),
    0.11: (8, 256, 4096),
}

# Float formulas such as 0.73/0.01 land a hair away from the integer they denote.
_ROUND_EPS = 1e-9


class ScheduleError(ValueError):
    """The requested schedule cannot be realised for the given frame."""


def _ceil(v: float) -> int:
    return int(math.ceil(v - _ROUND_EPS))


def _floor(v: float) -> int:
    return int(math.floor(v + _ROUND_EPS))


@dataclass(frozen=True)
class BlockSchedule:
    """Per-pass block sizes plus the variant switches.

    When ``biconf_s`` is set, only the first two passes run and the BICONF
    subset iterations replace the remaining passes.
    """

    k: tuple[int, ...]
    n: int
    variant: str = "custom"
    p: float | None = None
    biconf_s: int | None = None
    reuse_subblocks: bool = False
    shuffle_mode: str = "random"
    discard_singletons: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n < 1:
            raise ScheduleError("frame length must be >= 1")
        if not self.k:
            raise ScheduleError("a schedule needs at least one pass")
        for i, k in enumerate(self.k, start=1):
            if k < 1:
                raise ScheduleError(f"block size of pass {i} must be >= 1, got {k}")
            if k > self.n:
                raise ScheduleError(
                    f"block size k{i}={k} exceeds the frame length n={self.n}"
                )
        if self.shuffle_mode not in SHUFFLE_MODES:
            raise ScheduleError(f"unknown shuffle mode {self.shuffle_mode!r}")
        if self.biconf_s is not None and self.biconf_s < 1:
            raise ScheduleError("BICONF stop threshold must be >= 1")

    @property
    def total_passes(self) -> int:
        return len(self.k)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["k"] = list(self.k)
        d["notes"] = list(self.notes)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BlockSchedule":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ScheduleError(f"unknown schedule fields: {sorted(unknown)}")
        d = dict(d)
        d["k"] = tuple(int(v) for v in d["k"])
        d["notes"] = tuple(d.get("notes", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "BlockSchedule":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> "BlockSchedule":
        return cls.from_json(Path(path).read_text())

    def with_passes(self, passes: int) -> "BlockSchedule":
        """Same schedule truncated or extended (repeating the last size) to ``passes``."""
        if passes < 1:
            raise ScheduleError("pass count must be >= 1")
        k = self.k[:passes] + (self.k[-1],) * max(0, passes - len(self.k))
        return replace(self, k=k)


@dataclass(frozen=True)
class ScheduleRequest:
    variant: str
    p_estimate: float
    n: int
    passes: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ScheduleError(
                f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}"
            )
        if not 0.0 < self.p_estimate <= 0.5:
            raise ScheduleError(f"error-rate estimate must lie in (0, 0.5], got {self.p_estimate}")


def opt8_table_sizes(p: float) -> tuple[int, int, int]:
    for q, sizes in OPT8_TABLE.items():
        if abs(q - p) < 1e-9:
            return sizes
    raise ScheduleError(
        f"opt8-table has no entry for p={p}; tabulated QBERs: "
        + ", ".join(f"{q:g}" for q in OPT8_TABLE)
    )


def opt8_formula_sizes(p: float) -> tuple[int, int, int]:
    alpha = math.log2(1.0 / p) - 0.5
    return 2 ** _ceil(alpha), 2 ** _ceil((alpha + 12) / 2), 4096


def _half(n: int) -> int:
    return (n + 1) // 2


def build_schedule(req: ScheduleRequest) -> BlockSchedule:
    """Schedule of the requested variant, sized from the error-rate estimate."""
    p, n, v = req.p_estimate, req.n, req.variant
    notes: list[str] = []
    flags: dict = {}
    if v == "original":
        k1 = _ceil(0.73 / p)
        k = [k1 * 2**i for i in range(4)]
    elif v == "mod1":
        k = [_floor(4 * math.log(2) / (3 * p)), _floor(4 * math.log(2) / p)]
        flags["biconf_s"] = 10
    elif v == "opt2":
        k1 = _ceil(0.8 / p)
        k = [k1, 5 * k1] + [_half(n)] * 8
    elif v in ("opt3", "opt4", "opt5", "opt6"):
        k1 = _ceil(1.0 / p)
        k = [k1, 2 * k1] + [_half(n)] * 14
        flags["reuse_subblocks"] = v != "opt3"
        if v == "opt5":
            flags["shuffle_mode"] = "constrained-random"
        if v == "opt6":
            flags["discard_singletons"] = True
            notes.append("k2 not re-derived for singleton discard")
    elif v == "opt7":
        k1 = 2 ** _ceil(math.log2(1.0 / p))
        k = [k1, 4 * k1] + [_half(n)] * 12
        flags["reuse_subblocks"] = True
    elif v in ("opt8", "opt8-formula", "opt8-table"):
        k1, k2, k3 = opt8_table_sizes(p) if v == "opt8-table" else opt8_formula_sizes(p)
        k = [k1, k2, k3] + [_half(n)] * 11
        flags["reuse_subblocks"] = True
        if n != OPT8_FRAME_LENGTH:
            notes.append(f"opt8 parameters were tuned for n={OPT8_FRAME_LENGTH}, got n={n}")
    else:
        raise ScheduleError("custom schedules are built with custom_schedule() or loaded from JSON")

    if not 1 <= k[0] <= n:
        raise ScheduleError(
            f"first block size k1={k[0]} does not fit a frame of n={n} bits (p={p} too small?)"
        )
    k = [min(max(1, ki), n) for ki in k]
    sched = BlockSchedule(k=tuple(k), n=n, variant=v, p=p, notes=tuple(notes), **flags)
    if req.passes is not None:
        sched = sched.with_passes(req.passes)
    return sched


def custom_schedule(
    k,
    n: int,
    *,
    reuse_subblocks: bool = True,
    shuffle_mode: str = "random",
    discard_singletons: bool = False,
    biconf_s: int | None = None,
    p: float | None = None,
) -> BlockSchedule:
    return BlockSchedule(
        k=tuple(int(v) for v in k),
        n=n,
        variant="custom",
        p=p,
        biconf_s=biconf_s,
        reuse_subblocks=reuse_subblocks,
        shuffle_mode=shuffle_mode,
        discard_singletons=discard_singletons,
    )


def expected_errors_after_pass1(q: float) -> float:
    """Expected errors left in a first-pass block of size ceil(1/q) that passed the parity check."""
    if not 0.0 < q <= 0.5:
        raise ValueError(f"q must lie in (0, 0.5], got {q}")
    return (1.0 + (1.0 - 2.0 * q) ** _ceil(1.0 / q)) / 2.0
