"""Line-oriented session transcripts and their replay check.

Layout::

    cascade-ir-transcript 1
    meta n=<n> seed=<seed> passes=<T> schedule=<json>
    round <r> sent=<a> inferred=<b> registry=<c> | <event>; <event>; ...
    ...
    total m=<m> rounds=<R>

One ``round`` line per channel use.  Each event is
``kind:pass:block:node:alice:bob:how:pos`` where ``pass`` is 1-based (or
``biconf``), ``node`` is the heap index inside the block's bisection tree,
``how`` is ``sent``, ``inferred`` or ``registry`` for parities and ``-`` for
the rest, and ``pos`` is a frame position (or ``-``).  Kinds: ``block``
(top-level parity), ``half`` (bisection parity), ``subset`` (BICONF subset
parity), ``start`` (search opened), ``flip`` (correction), ``abort`` (search
dropped because its block became even).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import _kernel as K

MAGIC = "cascade-ir-transcript 1"

_KIND_NAME = {
    K.EV_BLOCK: "block",
    K.EV_HALF: "half",
    K.EV_FLIP: "flip",
    K.EV_ABORT: "abort",
    K.EV_SUBSET: "subset",
    K.EV_START: "start",
}
_PARITY_KINDS = ("block", "half", "subset")
_HOW = {K.FLAG_INFERRED: "inferred", K.FLAG_SENT: "sent", K.FLAG_REGISTRY: "registry"}


class TranscriptError(ValueError):
    """Malformed transcript, or one whose totals disagree with its records."""


@dataclass(frozen=True)
class Event:
    kind: str
    pass_index: int | str
    block: int
    node: int
    alice: int
    bob: int
    how: str
    pos: int | None

    def format(self) -> str:
        pos = "-" if self.pos is None else str(self.pos)
        return (f"{self.kind}:{self.pass_index}:{self.block}:{self.node}:"
                f"{self.alice}:{self.bob}:{self.how}:{pos}")

    @classmethod
    def parse(cls, text: str) -> "Event":
        parts = text.strip().split(":")
        if len(parts) != 8:
            raise TranscriptError(f"bad event {text!r}")
        kind, pas, block, node, alice, bob, how, pos = parts
        if kind not in _KIND_NAME.values():
            raise TranscriptError(f"unknown event kind {kind!r}")
        try:
            return cls(
                kind,
                pas if pas == "biconf" else int(pas),
                int(block),
                int(node),
                int(alice),
                int(bob),
                how,
                None if pos == "-" else int(pos),
            )
        except ValueError as exc:
            raise TranscriptError(f"bad event {text!r}") from exc


@dataclass
class Round:
    index: int
    events: list[Event] = field(default_factory=list)

    def count(self, how: str) -> int:
        return sum(1 for e in self.events if e.kind in _PARITY_KINDS and e.how == how)

    def format(self) -> str:
        body = "; ".join(e.format() for e in self.events)
        return (f"round {self.index} sent={self.count('sent')} inferred={self.count('inferred')} "
                f"registry={self.count('registry')} | {body}")


@dataclass
class Transcript:
    n: int
    seed: int
    schedule_json: str
    rounds: list[Round]
    m: int
    total_rounds: int

    @classmethod
    def from_session(cls, session) -> "Transcript":
        ev = session.events()
        slot = int(session.ws.cfg[K.CFG_T])
        by_round: dict[int, Round] = {}
        for kind, rnd, pas, block, node, alice, bob, flag, pos in ev.tolist():
            name = _KIND_NAME[kind]
            how = _HOW[flag] if name in _PARITY_KINDS else "-"
            r = by_round.setdefault(rnd, Round(rnd))
            r.events.append(Event(
                name,
                "biconf" if pas == slot else pas + 1,
                block,
                node,
                alice,
                bob,
                how,
                None if pos < 0 or name in ("block", "half", "start") else pos,
            ))
        led = session.ledger
        return cls(
            n=session.n,
            seed=session.seed,
            schedule_json=session.schedule.to_json(),
            rounds=[by_round[r] for r in sorted(by_round)],
            m=led.parity_bits_disclosed,
            total_rounds=led.rounds,
        )

    # -- text form -------------------------------------------------------

    def dumps(self) -> str:
        passes = len(json.loads(self.schedule_json)["k"])
        lines = [MAGIC, f"meta n={self.n} seed={self.seed} passes={passes} schedule={self.schedule_json}"]
        lines += [r.format() for r in self.rounds]
        lines.append(f"total m={self.m} rounds={self.total_rounds}")
        return "\n".join(lines) + "\n"

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].strip() != MAGIC:
            raise TranscriptError("missing transcript header")
        if len(lines) < 3:
            raise TranscriptError("truncated transcript")
        meta = lines[1]
        if not meta.startswith("meta "):
            raise TranscriptError("missing meta line")
        head, _, sched = meta.partition(" schedule=")
        fields = dict(tok.split("=", 1) for tok in head.split()[1:])
        rounds = []
        for ln in lines[2:-1]:
            rounds.append(_parse_round(ln))
        tail = lines[-1].split()
        if tail[0] != "total":
            raise TranscriptError("missing total line")
        totals = dict(tok.split("=", 1) for tok in tail[1:])
        try:
            return cls(
                n=int(fields["n"]),
                seed=int(fields["seed"]),
                schedule_json=sched,
                rounds=rounds,
                m=int(totals["m"]),
                total_rounds=int(totals["rounds"]),
            )
        except (KeyError, ValueError) as exc:
            raise TranscriptError(f"bad meta or total line: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        return cls.loads(Path(path).read_text())


def _parse_round(line: str) -> Round:
    head, sep, body = line.partition(" | ")
    toks = head.split()
    if not sep or len(toks) != 5 or toks[0] != "round":
        raise TranscriptError(f"bad round line {line[:60]!r}")
    r = Round(int(toks[1]), [Event.parse(e) for e in body.split(";") if e.strip()])
    claimed = dict(t.split("=", 1) for t in toks[2:])
    for how in ("sent", "inferred", "registry"):
        if int(claimed[how]) != r.count(how):
            raise TranscriptError(f"round {r.index}: header claims {claimed[how]} {how} parities, "
                                  f"records show {r.count(how)}")
    return r


@dataclass(frozen=True)
class ReplayReport:
    m: int
    rounds: int
    corrections: int
    ok: bool
    problems: tuple[str, ...]


def replay(tr: Transcript) -> ReplayReport:
    """Recount the ledger from the records and compare with the stated totals.

    Checks that every channel use ``1..R`` appears exactly once, that the
    number of transmitted parities equals ``m``, that inferred parities are
    never charged, and that every correction was preceded by a search start
    in the same block.
    """
    problems = []
    sent = sum(r.count("sent") for r in tr.rounds)
    if sent != tr.m:
        problems.append(f"m={tr.m} but {sent} parities are marked sent")
    idx = [r.index for r in tr.rounds]
    if idx != list(range(1, len(idx) + 1)):
        problems.append("round indices are not 1..R without gaps")
    if len(idx) != tr.total_rounds:
        problems.append(f"rounds={tr.total_rounds} but {len(idx)} round records")
    flips = 0
    open_blocks: set = set()
    for r in tr.rounds:
        for e in r.events:
            key = (e.pass_index, e.block)
            if e.kind == "start":
                open_blocks.add(key)
            elif e.kind == "flip":
                flips += 1
                if key not in open_blocks:
                    problems.append(f"round {r.index}: correction without a search in {key}")
                open_blocks.discard(key)
            elif e.kind == "abort":
                open_blocks.discard(key)
            elif e.kind == "half" and e.how == "registry" and e.pass_index == "biconf":
                problems.append(f"round {r.index}: BICONF parity taken from the registry")
    return ReplayReport(sent, len(idx), flips, not problems, tuple(problems))
