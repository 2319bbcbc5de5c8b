"""Deterministic, platform-independent random streams.

The generator is splitmix64: the state advances by a fixed odd constant and
each output is the state passed through a 64-bit integer finalizer. Because
output ``i`` depends only on ``state + (i + 1) * GAMMA``, blocks of draws are
produced in one vectorized step. Normal variates use the Box-Muller transform
on pairs of uniforms.
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(x: int) -> int:
    """Scalar splitmix64 finalizer, used to derive substream seeds."""
    return int(_mix(np.array([x & _MASK], dtype=np.uint64))[0])


class Rng:
    """Seedable splitmix64 stream.

    Identical seeds give bit-identical streams on every platform: only
    unsigned 64-bit wrapping arithmetic and IEEE doubles are involved.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        """Independent substream keyed by ``(seed, *keys)``.

        Lets per-item generation (e.g. image ``i`` of a dataset) be order
        independent.
        """
        state = mix64(int(seed) & _MASK)
        for k in keys:
            state = mix64(state ^ mix64((int(k) + GAMMA) & _MASK))
        return cls(state)

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        if n < 0:
            raise ValueError("n must be non-negative")
        with np.errstate(over="ignore"):
            steps = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(GAMMA)
            out = _mix(np.uint64(self.state) + steps)
        self.state = (self.state + n * GAMMA) & _MASK
        return out

    def random(self, size=None) -> np.ndarray | float:
        """Uniform doubles on [0, 1) from the top 53 bits."""
        n = 1 if size is None else int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(u[0]) if size is None else u.reshape(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        u = self.random(size)
        return low + (high - low) * u

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[:pairs]  # (0, 1], keeps log finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        z = loc + scale * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        u = self.random(size)
        out = low + np.floor(np.asarray(u) * (high - low)).astype(np.int64)
        out = np.minimum(out, high - 1)
        return int(out) if size is None else out

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")
