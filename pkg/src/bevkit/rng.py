"""Counter-based pseudo-random streams for reproducible fixtures.

The generator is a splitmix-style 64-bit mixer driven by an integer
counter, so the raw word stream is bit-exact on every platform: no
Mersenne state, no OS entropy, and word ``n`` can be computed without
generating words ``0..n-1``.  Floating-point variates are derived from
the words with plain IEEE-754 double arithmetic.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
# Odd salt separating derived streams; any fixed odd constant works.
_STREAM_SALT = 0xD6E8FEB86659FD93


def mix64(z: int) -> int:
    """Finalizer of the splitmix64 generator (pure-int reference)."""
    z &= _MASK64
    z = (z ^ (z >> 30)) * _MIX1 & _MASK64
    z = (z ^ (z >> 27)) * _MIX2 & _MASK64
    return z ^ (z >> 31)


class CounterRng:
    """Deterministic stream of variates keyed by (seed, stream).

    Word ``i`` of the stream is ``mix64(key + (i+1) * golden)`` where
    ``key`` folds the seed and stream id together.  Instances advance a
    cursor, so repeated draws continue the stream; two instances built
    from the same (seed, stream) replay identical values.
    """

    def __init__(self, seed: int, stream: int = 0):
        self._key = mix64((seed & _MASK64) ^ mix64((stream * _STREAM_SALT + 1) & _MASK64))
        self._cursor = 0

    def child(self, index: int) -> "CounterRng":
        """Independent derived stream (e.g. one per scene or worker)."""
        return CounterRng(self._key, stream=index + 1)

    def _words(self, n: int) -> np.ndarray:
        idx = np.arange(self._cursor + 1, self._cursor + n + 1, dtype=np.uint64)
        self._cursor += n
        z = np.uint64(self._key) + idx * np.uint64(_GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform in [0, 1), 53-bit resolution."""
        return (self._words(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, lo: float, hi: float, n: int) -> np.ndarray:
        return lo + (hi - lo) * self.uniforms(n)

    def normals(self, n: int) -> np.ndarray:
        """n standard-normal doubles via Box-Muller."""
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def integers(self, lo: int, hi: int, n: int) -> np.ndarray:
        """n ints uniform over [lo, hi)."""
        if hi <= lo:
            raise ValueError("empty integer range")
        return lo + np.minimum(
            (self.uniforms(n) * (hi - lo)).astype(np.int64), hi - lo - 1
        )
