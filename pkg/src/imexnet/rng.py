"""SplitMix64 pseudo-random generator.

Every stochastic choice in the package (weight init, dataset generation,
shuffling, perturbations) draws from this stream so runs are reproducible
bit-for-bit across platforms.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


class Rng:
    """Mutable SplitMix64 state.  ``copy()`` forks an independent replica."""

    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def copy(self) -> "Rng":
        return Rng(self.state)

    def __eq__(self, other):
        return isinstance(other, Rng) and other.state == self.state

    def __repr__(self):
        return f"Rng(state=0x{self.state:016X})"

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * MIX1) & MASK64
        z = ((z ^ (z >> 27)) * MIX2) & MASK64
        return z ^ (z >> 31)

    def uniform_int(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range ``[lo, hi]`` (unbiased)."""
        if lo > hi:
            raise ValueError(f"empty range [{lo}, {hi}]")
        n = hi - lo + 1
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            z = self.next_u64()
            if z < limit:
                return lo + z % n

    def uniform_unit(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits of one draw."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def u64_array(self, n: int) -> np.ndarray:
        """The next ``n`` outputs as a uint64 array, identical to ``n`` calls of next_u64."""
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN) & MASK64
        return z

    def uniform_array(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Float64 array of uniform draws in ``[lo, hi)``, row-major fill order."""
        n = int(np.prod(shape, dtype=np.int64))
        u = (self.u64_array(n) >> np.uint64(11)).astype(np.float64) / float(1 << 53)
        return (lo + (hi - lo) * u).reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        """Approximately standard normal draws: sum of 12 uniforms minus 6."""
        n = int(np.prod(shape, dtype=np.int64))
        u = self.uniform_array((n, 12))
        return (u.sum(axis=1) - 6.0).reshape(shape)

    def permutation(self, n: int) -> list:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.uniform_int(0, i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx
