"""Seeded random streams.

Every random draw in the package descends from one master seed through
labeled sub-streams (``"stratum:3"``, ``"tree:17"``, ``"split"``...), so a
stream's output never depends on how many other streams were consumed before
it or on which thread consumes it.

Two generators are used:

* numpy ``PCG64`` for vectorized draws (sampling, bootstraps, bagging);
* xoshiro256** for draws made inside the tree kernels, where the compiled
  and pure-Python backends must see exactly the same sequence.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step; returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def fnv1a64(label: str) -> int:
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h ^= b
        h = (h * _FNV_PRIME) & MASK64
    return h


def derive_seed(seed: int, label: str) -> int:
    """64-bit seed for the sub-stream ``label`` of master ``seed``."""
    state = (int(seed) & MASK64) ^ fnv1a64(label)
    state, out = splitmix64(state)
    _, out2 = splitmix64(state ^ out)
    return out2


def generator(seed: int, label: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, label)))


def xoshiro_state(seed: int, label: str) -> np.ndarray:
    """Initial xoshiro256** state (4 x uint64) for a labeled stream."""
    x = derive_seed(seed, label)
    words = []
    for _ in range(4):
        x, out = splitmix64(x)
        words.append(out)
    if not any(words):
        words[0] = 1
    return np.array(words, dtype=np.uint64)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """Pure-Python xoshiro256** operating in place on a uint64[4] state array.

    Mirrors the generator compiled into the Cython kernels.
    """

    __slots__ = ("s", "_state")

    def __init__(self, state: np.ndarray):
        self._state = state
        self.s = [int(v) for v in state]

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def bounded(self, n: int) -> int:
        """Integer in [0, n) from the top 53 bits."""
        u = float(self.next() >> 11) * (1.0 / 9007199254740992.0)
        k = int(u * n)
        return k if k < n else n - 1

    def sync(self) -> None:
        """Write the advanced state back into the caller's array."""
        self._state[:] = np.array(self.s, dtype=np.uint64)
