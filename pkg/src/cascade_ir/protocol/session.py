"""Two-party reconciliation session built on the compiled kernel.

A :class:`Session` holds both frames, the schedule and every piece of shared
state.  Both parties are simulated in one process; only Alice's (reference)
parities that actually cross the channel are charged to the ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..bitframe import BlockRef, Permutation, UsageError, as_frame, hamming_distance
from ..schedules import BlockSchedule
from . import _kernel as K


class ProtocolError(AssertionError):
    """Internal inconsistency, e.g. a search requested on an even block."""


@dataclass
class LeakageLedger:
    """Disclosed parity bits and channel uses of one session.

    ``per_pass_disclosed[i]`` and ``per_pass_binary_searches[i]`` refer to pass
    ``i + 1``.  ``biconf_disclosed`` covers the subset parities and the
    searches they trigger.
    """

    parity_bits_disclosed: int = 0
    rounds: int = 0
    per_pass_disclosed: list[int] = field(default_factory=list)
    per_pass_binary_searches: list[int] = field(default_factory=list)
    biconf_disclosed: int = 0
    biconf_iterations: int = 0
    inferred_parities: int = 0
    registry_hits: int = 0


@dataclass(frozen=True)
class RegistryEntry:
    block: BlockRef
    parity_reference: int
    parity_working: int
    origin: str  # "top-level" or "dichotomic"

    @property
    def odd(self) -> bool:
        return self.parity_reference != self.parity_working


@dataclass
class ReconcileOutcome:
    """Result of reconciling one frame pair.

    ``residual_errors`` is measured against the reference frame, which only a
    simulation can do.
    """

    corrected_frame: np.ndarray
    m: int
    rounds: int
    residual_errors: int
    initial_errors: int
    ledger: LeakageLedger
    residual_after_pass: list[int] = field(default_factory=list)
    transcript: "object | None" = None

    @property
    def success(self) -> bool:
        return self.residual_errors == 0


class Session:
    """Cascade state machine for one frame pair.

    Parameters
    ----------
    x, y : array_like of {0, 1}
        Alice's reference frame and Bob's noisy copy.  ``y`` is copied; the
        corrected frame is available from :attr:`working_frame`.
    schedule : BlockSchedule
        Block sizes and variant switches; ``schedule.n`` must equal ``len(x)``.
    seed : int
        Shared seed from which all shuffles and BICONF subsets are derived.
    record : bool
        Keep an event log so a transcript can be produced.
    """

    def __init__(self, x, y, schedule: BlockSchedule, seed: int, record: bool = False):
        x = as_frame(x)
        y = as_frame(y)
        if x.size != y.size:
            raise UsageError(f"frame lengths differ: {x.size} != {y.size}")
        if schedule.n != x.size:
            raise UsageError(f"schedule was built for n={schedule.n}, frames have n={x.size}")
        self.schedule = schedule
        self.seed = int(seed) & ((1 << 64) - 1)
        self.reference_frame = x
        self.ws = K.allocate(
            x.size,
            schedule.k,
            schedule.reuse_subblocks,
            schedule.discard_singletons,
            schedule.shuffle_mode == "constrained-random",
            schedule.biconf_s or 0,
            record,
        )
        self.ws.x[:] = x
        self.ws.y[:] = y
        K.begin(self.ws, np.uint64(self.seed))
        self._passes_done = 0
        self._biconf_done = False

    # -- state -----------------------------------------------------------

    @property
    def n(self) -> int:
        return int(self.ws.cfg[K.CFG_N])

    @property
    def working_frame(self) -> np.ndarray:
        return self.ws.y.copy()

    @property
    def passes_done(self) -> int:
        return self._passes_done

    @property
    def residual_errors(self) -> int:
        return hamming_distance(self.ws.x, self.ws.y)

    @property
    def ledger(self) -> LeakageLedger:
        ws = self.ws
        T = self._passes_done
        return LeakageLedger(
            parity_bits_disclosed=int(ws.ctl[K.C_M]),
            rounds=int(ws.ctl[K.C_ROUNDS]),
            per_pass_disclosed=[int(v) for v in ws.pinfo[:T, K.P_M]],
            per_pass_binary_searches=[int(v) for v in ws.pinfo[:T, K.P_SEARCHES]],
            biconf_disclosed=int(ws.pinfo[ws.cfg[K.CFG_T], K.P_M]),
            biconf_iterations=int(ws.ctl[K.C_BICONF_IT]),
            inferred_parities=int(ws.ctl[K.C_INFERRED]),
            registry_hits=int(ws.ctl[K.C_REGHITS]),
        )

    def stats(self) -> dict:
        """Engine counters (aborted searches, wrong corrections, ...) for diagnostics."""
        c = self.ws.ctl
        return {
            "searches": int(c[K.C_SEARCHES]),
            "aborted_searches": int(c[K.C_ABORTS]),
            "aborted_bits": int(c[K.C_WASTE]),
            "registry_hits": int(c[K.C_REGHITS]),
            "wrong_corrections": int(c[K.C_BADFLIPS]),
            "corrections": int(c[K.C_FLIPS]),
            "singletons": int(c[K.C_SINGLES]),
            "constrained_shuffles": int(c[K.C_CONSTRAINED_OK]),
            "events_overflowed": bool(c[K.C_EVOVER]),
        }

    def effective_length(self, pass_index: int) -> int:
        """Number of positions laid out in pass ``pass_index`` (1-based)."""
        self._check_built(pass_index)
        return int(self.ws.pinfo[pass_index - 1, K.P_PLEN])

    def block_size(self, pass_index: int) -> int:
        self._check_built(pass_index)
        return int(self.ws.pinfo[pass_index - 1, K.P_K])

    def permutation(self, pass_index: int) -> Permutation:
        """Layout of pass ``pass_index``: slot ``t`` holds original position ``mapping[t]``.

        With singleton discard the layout covers only the remaining positions.
        """
        self._check_built(pass_index)
        j = pass_index - 1
        plen = int(self.ws.pinfo[j, K.P_PLEN])
        return Permutation(self.ws.order[j, :plen].copy(), self.seed, j)

    def blocks(self, pass_index: int) -> list[BlockRef]:
        """Top-level blocks of a built pass."""
        perm = self.permutation(pass_index).mapping
        k = self.block_size(pass_index)
        return [
            BlockRef(pass_index, tuple(int(p) for p in perm[a:a + k]))
            for a in range(0, perm.size, k)
        ]

    def known_singletons(self) -> np.ndarray:
        """Positions whose value is implied by disclosed parities (tracked only with singleton discard)."""
        ep = self.ws.ctl[K.C_EPOCH]
        return np.flatnonzero(self.ws.single == ep)

    def registry_entries(self) -> list[RegistryEntry]:
        """Every registered block with both stored parities.

        Without block reuse only top-level blocks are registered.
        """
        ws = self.ws
        ep = ws.ctl[K.C_EPOCH]
        out = []
        for j in range(self._built_passes()):
            k = int(ws.pinfo[j, K.P_K])
            plen = int(ws.pinfo[j, K.P_PLEN])
            base0 = int(ws.pinfo[j, K.P_NODEBASE])
            tsize = int(ws.pinfo[j, K.P_TSIZE])
            order = ws.order[j]
            for b in range(int(ws.pinfo[j, K.P_NBLK])):
                base = base0 + b * tsize
                a0 = b * k
                stack = [(1, a0, min(k, plen - a0))]
                while stack:
                    v, a, L = stack.pop()
                    if ws.known[base + v] != ep:
                        continue
                    out.append(RegistryEntry(
                        BlockRef(j + 1, tuple(int(p) for p in order[a:a + L])),
                        int(ws.apar[base + v]),
                        int(ws.bpar[base + v]),
                        "top-level" if v == 1 else "dichotomic",
                    ))
                    if L > 1:
                        h = (L + 1) // 2
                        stack.append((2 * v + 1, a + h, L - h))
                        stack.append((2 * v, a, h))
        return out

    def odd_set(self) -> list[BlockRef]:
        return [e.block for e in self.registry_entries() if e.odd]

    # -- protocol steps --------------------------------------------------

    def run_pass(self, pass_index: int | None = None) -> None:
        """Shuffle, exchange the top-level parities of the next pass and drain all odd blocks."""
        self.build_pass(pass_index)
        self.exchange_pass()
        self.drain()
        K.close_pass(self.ws, self._passes_done - 1)

    def build_pass(self, pass_index: int | None = None) -> None:
        """Lay out the next pass without exchanging anything."""
        i = self._passes_done + 1 if pass_index is None else pass_index
        if i != self._passes_done + 1 or self._built_passes() != self._passes_done:
            raise UsageError(f"pass {i} requested, but passes 1..{self._passes_done} are complete")
        if i > len(self.schedule.k):
            raise UsageError(f"schedule has only {len(self.schedule.k)} passes")
        if self._biconf_done:
            raise UsageError("no further passes after BICONF")
        K.build_pass(self.ws, i - 1)

    def exchange_pass(self) -> None:
        """One round carrying the parities of every top-level block of the pass just built."""
        j = self._built_passes() - 1
        if j != self._passes_done:
            raise UsageError("build a pass before exchanging its parities")
        K.exchange_pass(self.ws, j)
        self._passes_done += 1

    def drain(self) -> None:
        """Search and correct until no registered block has mismatched parities."""
        K.drain(self.ws)

    def binary_search_block(self, pass_index: int, block_index: int) -> int:
        """Locate one error in an odd top-level block without correcting it.

        Raises
        ------
        ProtocolError
            If the block's parities match (there is nothing to find).
        """
        self._check_built(pass_index)
        j = pass_index - 1
        if not 0 <= block_index < self.ws.pinfo[j, K.P_NBLK]:
            raise UsageError(f"pass {pass_index} has no block {block_index}")
        if self._passes_done < pass_index:
            raise UsageError("exchange the pass parities before searching its blocks")
        pos = int(K.search_alone(self.ws, j, block_index))
        if pos < 0:
            raise ProtocolError(f"block {block_index} of pass {pass_index} has even parity")
        return pos

    def inject_error(self, position: int) -> None:
        """Toggle Bob's bit at ``position`` as if the channel had corrupted it.

        Registered blocks containing the position become odd; call
        :meth:`drain` to let the protocol repair it.
        """
        if not 0 <= position < self.n:
            raise UsageError(f"position {position} outside the frame")
        K.flip(self.ws, position, False)

    def biconf_round(self) -> int:
        """One BICONF iteration; returns the number of corrections it made."""
        self._check_biconf()
        it = int(self.ws.ctl[K.C_BICONF_IT])
        return int(K.biconf_iteration(self.ws, it))

    def run_biconf(self) -> None:
        """BICONF iterations until ``biconf_s`` consecutive ones find nothing."""
        self._check_biconf()
        K.run_biconf(self.ws)
        self._biconf_done = True

    def run(self) -> "Session":
        """Run every remaining pass, then BICONF if the schedule asks for it."""
        while self._passes_done < len(self.schedule.k):
            self.run_pass()
        if self.schedule.biconf_s and not self._biconf_done:
            self.run_biconf()
        return self

    # -- results ---------------------------------------------------------

    def events(self) -> np.ndarray:
        """Recorded events, one row ``(kind, round, pass, block, node, alice, bob, flag, pos)``."""
        if not self.ws.cfg[K.CFG_RECORD]:
            raise UsageError("session was created with record=False")
        if self.ws.ctl[K.C_EVOVER]:
            raise ProtocolError("event log overflowed")
        return self.ws.ev[: int(self.ws.ctl[K.C_NEV])].copy()

    def outcome(self, transcript: bool = False) -> ReconcileOutcome:
        ws = self.ws
        hist = ws.hist
        slots = list(range(self._passes_done))
        if self._biconf_done:
            slots.append(int(ws.cfg[K.CFG_T]))
        tr = None
        if transcript:
            from .transcript import Transcript

            tr = Transcript.from_session(self)
        return ReconcileOutcome(
            corrected_frame=self.working_frame,
            m=int(ws.ctl[K.C_M]),
            rounds=int(ws.ctl[K.C_ROUNDS]),
            residual_errors=self.residual_errors,
            initial_errors=int(ws.ctl[K.C_ERR0]),
            ledger=self.ledger,
            residual_after_pass=[int(hist[s, K.H_RESIDUAL]) for s in slots],
            transcript=tr,
        )

    # -- helpers ---------------------------------------------------------

    def _built_passes(self) -> int:
        return int(self.ws.ctl[K.C_CURPASS])

    def _check_built(self, pass_index: int) -> None:
        if not 1 <= pass_index <= self._built_passes():
            raise UsageError(f"pass {pass_index} has not been built")

    def _check_biconf(self) -> None:
        if not self.schedule.biconf_s:
            raise UsageError("schedule has no BICONF stage")
        if self._passes_done < len(self.schedule.k):
            raise UsageError("BICONF runs after all regular passes")
        if self._biconf_done:
            raise UsageError("BICONF already finished")


def reconcile(x, y, schedule: BlockSchedule, seed: int, transcript: bool = False) -> ReconcileOutcome:
    """Reconcile ``y`` towards ``x`` with the given schedule.

    Failure is a normal result: check ``outcome.success``.

    Examples
    --------
    >>> from cascade_ir.schedules import custom_schedule
    >>> x = np.zeros(8, np.uint8); y = x.copy(); y[5] = 1
    >>> out = reconcile(x, y, custom_schedule([8], 8, reuse_subblocks=False), seed=1)
    >>> out.success, out.m
    (True, 4)
    """
    s = Session(x, y, schedule, seed, record=transcript)
    s.run()
    return s.outcome(transcript=transcript)
