"""Deterministic random streams: xoshiro256** seeded through SplitMix64.

Every stochastic step in the package draws from an :class:`RngStream`, so a
run is reproducible from a single integer seed on any platform that provides
IEEE-754 doubles.  Substreams for parallel work are derived with
:meth:`RngStream.spawn`, which seeds a fresh generator from
``base_seed XOR index``; a stream is never shared between tasks.

Algorithms
----------
* state seeding: four successive SplitMix64 outputs starting from the seed;
* raw output: xoshiro256** (Blackman & Vigna);
* uniform: top 53 bits scaled by 2**-53, so values lie in [0, 1);
* standard normal: Marsaglia polar method, the second variate of each pair is
  kept as a spare so that chunked draws equal one large draw.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; return ``(new_state, output)``."""
    x = (x + _GOLDEN) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _seed_state(seed: int) -> np.ndarray:
    x = seed & MASK64
    out = np.empty(4, dtype=np.uint64)
    for i in range(4):
        x, z = splitmix64(x)
        out[i] = np.uint64(z)
    return out


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, inline="always")
def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@njit(cache=True, inline="always")
def _uniform(s):
    return np.float64(_next(s) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = _uniform(s)


@njit(cache=True)
def _fill_normal(s, spare, out):
    # spare[0] = 1.0 when spare[1] holds an unused variate
    i = 0
    n = out.shape[0]
    if n > 0 and spare[0] == 1.0:
        out[0] = spare[1]
        spare[0] = 0.0
        i = 1
    while i < n:
        u = 2.0 * _uniform(s) - 1.0
        v = 2.0 * _uniform(s) - 1.0
        q = u * u + v * v
        if q <= 0.0 or q >= 1.0:
            continue
        f = np.sqrt(-2.0 * np.log(q) / q)
        out[i] = u * f
        i += 1
        if i < n:
            out[i] = v * f
            i += 1
        else:
            spare[0] = 1.0
            spare[1] = v * f


@njit(cache=True)
def _fill_integers(s, high, out):
    for i in range(out.shape[0]):
        out[i] = np.int64(_uniform(s) * high)


@njit(cache=True)
def _permutation(s, n):
    out = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = np.int64(_uniform(s) * (i + 1))
        tmp = out[i]
        out[i] = out[j]
        out[j] = tmp
    return out


class RngStream:
    """A single-owner xoshiro256** stream.

    Args:
        seed: any Python integer; reduced modulo 2**64.
    """

    algorithm = "xoshiro256**/splitmix64"

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.state = _seed_state(self.seed)
        self._spare = np.zeros(2)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"

    def spawn(self, index: int) -> "RngStream":
        """Substream seeded from ``seed XOR index`` (independent of draws made so far)."""
        return RngStream(self.seed ^ (int(index) & MASK64))

    def child(self) -> "RngStream":
        """Fresh stream seeded from the next raw output; advances this stream."""
        return RngStream(int(self.next_u64()))

    def next_u64(self, size: int | None = None):
        out = np.empty(1 if size is None else size, dtype=np.uint64)
        _fill_u64(self.state, out)
        return out[0] if size is None else out

    def uniform(self, size: int | None = None):
        out = np.empty(1 if size is None else size)
        _fill_uniform(self.state, out)
        return float(out[0]) if size is None else out

    def standard_normal(self, size: int | None = None):
        out = np.empty(1 if size is None else size)
        _fill_normal(self.state, self._spare, out)
        return float(out[0]) if size is None else out

    def normal(self, loc: float, scale: float, size: int):
        return loc + scale * self.standard_normal(size)

    def categorical_equal(self, levels: int, size: int | None = None):
        """Integers in ``[0, levels)`` with equal probabilities."""
        if levels < 1:
            raise ValueError("levels must be >= 1")
        return self.integers(levels, size)

    def integers(self, high: int, size: int | None = None):
        out = np.empty(1 if size is None else size, dtype=np.int64)
        _fill_integers(self.state, int(high), out)
        return int(out[0]) if size is None else out

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return (self.uniform(p.size).reshape(p.shape) < p).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return _permutation(self.state, int(n))

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in sorted order."""
        return np.sort(self.permutation(n)[:k])
