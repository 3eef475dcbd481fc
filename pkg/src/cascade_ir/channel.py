"""Binary symmetric channel producing Bob's noisy copy of Alice's frame."""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .bitframe import UsageError, as_frame
from .rng import STREAM_CHANNEL, STREAM_SOURCE, pcg_next, pcg_seed

_TWO32 = float(1 << 32)


@dataclass(frozen=True)
class BscModel:
    """Crossover probability ``q`` (the QBER) and the seed of the error pattern."""

    q: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.q <= 0.5:
            raise UsageError(f"crossover probability must lie in [0, 0.5], got {self.q}")


def flip_threshold(q: float) -> int:
    """32-bit threshold ``t`` such that a uniform ``u32 < t`` has probability ``q``."""
    return int(round(q * _TWO32))


@nb.njit(cache=True)
def nb_random_bits(out, seed):
    rng = np.zeros(2, np.uint64)
    pcg_seed(rng, seed, STREAM_SOURCE)
    n = out.size
    i = 0
    while i < n:
        word = pcg_next(rng)
        for _ in range(32):
            if i >= n:
                break
            out[i] = np.uint8(word & np.uint64(1))
            word = word >> np.uint64(1)
            i += 1


@nb.njit(cache=True)
def nb_transmit(x, out, threshold, seed):
    """Copy ``x`` into ``out`` flipping each bit when a PCG32 draw falls below ``threshold``.

    Returns the number of flipped bits.
    """
    rng = np.zeros(2, np.uint64)
    pcg_seed(rng, seed, STREAM_CHANNEL)
    t = np.uint64(threshold)
    flips = 0
    for i in range(x.size):
        if pcg_next(rng) < t:
            out[i] = x[i] ^ np.uint8(1)
            flips += 1
        else:
            out[i] = x[i]
    return flips


def random_frame(n: int, seed: int) -> np.ndarray:
    """Uniform random reference frame of ``n`` bits."""
    if n < 1:
        raise UsageError("frame length must be >= 1")
    out = np.empty(n, dtype=np.uint8)
    nb_random_bits(out, np.uint64(seed))
    return out


def transmit(x, model: BscModel) -> np.ndarray:
    """Pass ``x`` through BSC(q); deterministic given ``model.seed``."""
    x = as_frame(x)
    out = np.empty_like(x)
    nb_transmit(x, out, np.uint64(flip_threshold(model.q)), np.uint64(model.seed))
    return out


def frame_pair(n: int, q: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Correlated ``(x, y)`` pair: uniform ``x`` and its BSC(q) output, both from one seed."""
    x = random_frame(n, seed)
    return x, transmit(x, BscModel(q, seed))
