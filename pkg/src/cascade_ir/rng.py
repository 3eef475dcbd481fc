"""Seedable generators shared by both parties.

Two small, well documented algorithms are used so that every random choice
made during a simulation can be reproduced bit for bit from a seed:

* PCG32 (``pcg32_random_r`` from the PCG family, XSH-RR output, 64-bit LCG
  state) drives shuffles, subset draws and the channel.  Each use gets its own
  PCG stream (the ``initseq`` argument), so passes never share a sequence.
* SplitMix64 is used only as a mixing function to derive per-frame and
  per-session seeds from a master seed and indices.

Every function exists twice: a plain Python version (readable, used by tests
as a reference) and a numba version used inside the compiled protocol kernel.
"""

from __future__ import annotations

import numba as nb
import numpy as np

GENERATOR_ID = "pcg32-xsh-rr (64-bit LCG state, per-use streams); splitmix64 seed mixing"

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1
_PCG_MULT = 6364136223846793005
_GOLDEN = 0x9E3779B97F4A7C15

# Stream identifiers.  Pass permutations use the pass index (0-based) directly.
STREAM_SOURCE = 1 << 40
STREAM_CHANNEL = (1 << 40) + 1
STREAM_BICONF = 1 << 32
STREAM_CONSTRAINED = 1 << 33


class Pcg32:
    """Reference PCG32 generator (pure Python)."""

    def __init__(self, seed: int, stream: int = 0):
        self.state = 0
        self.inc = ((stream << 1) | 1) & _MASK64
        self.next_u32()
        self.state = (self.state + (seed & _MASK64)) & _MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * _PCG_MULT + self.inc) & _MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & _MASK32
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((-rot) & 31))) & _MASK32

    def bounded(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` (Lemire's multiply-shift with rejection)."""
        if not 1 <= bound <= _MASK32:
            raise ValueError("bound must be in [1, 2**32)")
        m = self.next_u32() * bound
        low = m & _MASK32
        if low < bound:
            threshold = ((1 << 32) - bound) % bound
            while low < threshold:
                m = self.next_u32() * bound
                low = m & _MASK32
        return m >> 32


def splitmix64(x: int) -> int:
    """One SplitMix64 step applied to ``x`` (returns the mixed output)."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Mix a master seed with integer keys into a 64-bit seed."""
    h = splitmix64(master & _MASK64)
    for k in keys:
        h = splitmix64(h ^ (k & _MASK64))
    return h


# ---------------------------------------------------------------------------
# numba twins; generator state lives in a uint64[2] array (state, inc)

_U_MULT = np.uint64(_PCG_MULT)
_U_MASK32 = np.uint64(_MASK32)
_U_GOLDEN = np.uint64(_GOLDEN)
_U_SM1 = np.uint64(0xBF58476D1CE4E5B9)
_U_SM2 = np.uint64(0x94D049BB133111EB)
_U_ONE = np.uint64(1)
_U_TWO32 = np.uint64(1 << 32)


@nb.njit(cache=True)
def pcg_next(rng):
    old = rng[0]
    rng[0] = old * _U_MULT + rng[1]
    xorshifted = (((old >> np.uint64(18)) ^ old) >> np.uint64(27)) & _U_MASK32
    rot = old >> np.uint64(59)
    left = (np.uint64(32) - rot) & np.uint64(31)
    return ((xorshifted >> rot) | (xorshifted << left)) & _U_MASK32


@nb.njit(cache=True)
def pcg_seed(rng, seed, stream):
    rng[0] = np.uint64(0)
    rng[1] = (np.uint64(stream) << _U_ONE) | _U_ONE
    pcg_next(rng)
    rng[0] = rng[0] + np.uint64(seed)
    pcg_next(rng)


@nb.njit(cache=True)
def pcg_bounded(rng, bound):
    b = np.uint64(bound)
    m = pcg_next(rng) * b
    low = m & _U_MASK32
    if low < b:
        threshold = (_U_TWO32 - b) % b
        while low < threshold:
            m = pcg_next(rng) * b
            low = m & _U_MASK32
    return np.int64(m >> np.uint64(32))


@nb.njit(cache=True)
def nb_splitmix64(x):
    z = np.uint64(x) + _U_GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _U_SM1
    z = (z ^ (z >> np.uint64(27))) * _U_SM2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def nb_derive_seed2(master, k1, k2):
    h = nb_splitmix64(np.uint64(master))
    h = nb_splitmix64(h ^ np.uint64(k1))
    return nb_splitmix64(h ^ np.uint64(k2))


@nb.njit(cache=True)
def shuffle_inplace(rng, arr, count):
    """Fisher-Yates over ``arr[:count]``."""
    for i in range(count - 1, 0, -1):
        j = pcg_bounded(rng, i + 1)
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp
