"""Bit frames, block parities and the shuffles shared by both parties.

Frames are plain ``numpy.uint8`` arrays holding one bit per element.  Blocks
inside the protocol engine are contiguous ranges of a pass's shuffled order;
:class:`BlockRef` is the explicit, position-set form used at the API surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .rng import pcg_seed, shuffle_inplace


class UsageError(ValueError):
    """Invalid argument to a frame, channel or metric operation."""


def as_frame(bits) -> np.ndarray:
    """Validate ``bits`` and return them as a ``uint8`` frame (copy-free when possible)."""
    frame = np.asarray(bits)
    if frame.ndim != 1 or frame.size < 1:
        raise UsageError("a frame must be a non-empty 1-d bit sequence")
    if frame.dtype != np.uint8:
        if not np.all((frame == 0) | (frame == 1)):
            raise UsageError("frame elements must be 0 or 1")
        frame = frame.astype(np.uint8)
    elif frame.max() > 1:
        raise UsageError("frame elements must be 0 or 1")
    return frame


@dataclass(frozen=True)
class BlockRef:
    """A block of frame positions, in original (unshuffled) coordinates.

    ``pass_index`` is the 1-based pass number, or ``"biconf"`` for a subset
    drawn during a BICONF iteration.
    """

    pass_index: int | str
    positions: tuple[int, ...]

    def __post_init__(self):
        if not self.positions:
            raise UsageError("a block needs at least one position")
        if len(set(self.positions)) != len(self.positions):
            raise UsageError("block positions must be distinct")
        if min(self.positions) < 0:
            raise UsageError("block positions must be non-negative")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class Permutation:
    """Bijection on ``0..n-1``: ``mapping[t]`` is the original position placed at slot ``t``."""

    mapping: np.ndarray
    seed: int
    stream: int = 0

    @property
    def n(self) -> int:
        return int(self.mapping.size)

    def apply(self, frame: np.ndarray) -> np.ndarray:
        """Return the frame in shuffled order."""
        return np.asarray(frame)[self.mapping]

    def inverse(self) -> np.ndarray:
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.mapping.size, dtype=self.mapping.dtype)
        return inv


def parity(frame, block) -> int:
    """XOR of the frame bits selected by ``block`` (a BlockRef or index sequence)."""
    frame = np.asarray(frame)
    positions = block.positions if isinstance(block, BlockRef) else block
    idx = np.asarray(positions, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= frame.size):
        raise UsageError(f"block position out of range for frame of length {frame.size}")
    return int(np.bitwise_xor.reduce(frame[idx].astype(np.uint8), initial=0))


@nb.njit(cache=True)
def _fill_permutation(out, seed, stream):
    rng = np.zeros(2, np.uint64)
    pcg_seed(rng, seed, stream)
    for i in range(out.size):
        out[i] = i
    shuffle_inplace(rng, out, out.size)


def make_permutation(seed: int, n: int, stream: int = 0) -> Permutation:
    """Deterministic uniform shuffle of ``0..n-1`` from ``(seed, stream)``.

    Fisher-Yates driven by PCG32; the protocol engine uses the identical
    routine, with the pass index as ``stream``.
    """
    if n < 1:
        raise UsageError("permutation length must be >= 1")
    mapping = np.empty(n, dtype=np.int32)
    _fill_permutation(mapping, np.uint64(seed & ((1 << 64) - 1)), np.uint64(stream))
    return Permutation(mapping=mapping, seed=seed, stream=stream)


def hamming_distance(a, b) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise UsageError(f"frame lengths differ: {a.size} != {b.size}")
    return int(np.count_nonzero(a != b))
