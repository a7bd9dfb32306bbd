"""Counter-based random number streams.

Every stochastic routine in the package takes an :class:`Rng`. A stream is
identified by ``(seed, stream)``; the same pair always reproduces the same
sequence, and distinct streams are statistically independent (Philox
counter-based construction). Parallel code derives one child stream per
work unit instead of sharing a generator, which keeps results independent
of scheduling and thread count.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """SplitMix64 finalizer; bijective on 64-bit ints."""
    x &= _MASK64
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _MASK64
    return x ^ (x >> 31)


class Rng:
    """Reproducible random stream backed by a Philox bit generator.

    Parameters
    ----------
    seed : int
        Master seed (64-bit).
    stream : int
        Stream id (64-bit). Streams with the same seed but different ids
        are independent.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        )

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"

    # -- derivation ---------------------------------------------------------

    def substream(self, tag: int) -> "Rng":
        """Child stream; deterministic function of (seed, stream, tag)."""
        return Rng(self.seed, mix64(self.stream * _GOLDEN + 2 * tag + 1))

    def key64(self, tag: int = 0) -> int:
        """64-bit key for kernel-side counter RNGs, derived like substream."""
        return mix64(self.seed * _GOLDEN ^ mix64(self.stream * _GOLDEN + 2 * tag + 1))

    # -- draws --------------------------------------------------------------

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None, dtype=np.int64):
        return self._gen.integers(low, high, size=size, dtype=dtype)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen
