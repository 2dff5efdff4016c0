"""Splittable counter-based pseudo-random numbers.

All randomness in this package flows through :class:`Rng` so that a run is
reproducible bit-for-bit from a single integer seed, independently of
platform, numpy version, or call interleaving in unrelated code paths.
The generator is the splitmix64 mixing function applied to a counter; child
generators are derived by hashing a label into the parent seed, so separate
subsystems can draw independently without coordinating counters.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# 2^-53, the spacing of doubles in [0, 1)
_INV_2_53 = 1.0 / 9007199254740992.0


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic stream of random values identified by (seed, counter)."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = np.uint64(0)

    def split(self, label: int) -> "Rng":
        """Derive an independent child stream; does not advance this stream."""
        child_seed = _mix64(np.uint64([self._seed ^ _mix64(np.uint64([label + 1]))[0]]))[0]
        return Rng(int(child_seed))

    def _raw(self, n: int) -> np.ndarray:
        with np.errstate(over="ignore"):
            idx = self._counter + np.arange(n, dtype=np.uint64)
            out = _mix64(self._seed + idx * _GAMMA)
        self._counter += np.uint64(n)
        return out

    def uniform(self, shape=()) -> np.ndarray:
        """Doubles in [0, 1), one per element of ``shape``."""
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return u.reshape(shape) if shape else float(u[0])

    def normal(self, shape=()) -> np.ndarray:
        """Standard normals via Box-Muller on paired uniforms."""
        n = int(np.prod(shape)) if shape else 1
        m = (n + 1) // 2
        u1 = np.maximum(self.uniform((m,)), _INV_2_53)
        u2 = self.uniform((m,))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, low: int, high: int, size: int = 1) -> np.ndarray:
        """Integers in [low, high), i.i.d. uniform (modulo bias < 2^-50)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        span = np.uint64(high - low)
        return (low + (self._raw(size) % span).astype(np.int64)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Uniform permutation of range(n) by sorting random 64-bit keys."""
        keys = self._raw(n)
        return np.argsort(keys, kind="stable").astype(np.int64)

    def choice(self, items: np.ndarray, size: int) -> np.ndarray:
        """Uniform sample of ``size`` items without replacement."""
        items = np.asarray(items)
        if size > len(items):
            raise ValueError(f"cannot draw {size} from {len(items)} items")
        return items[self.permutation(len(items))[:size]]

    def shuffle(self, items: np.ndarray) -> np.ndarray:
        return np.asarray(items)[self.permutation(len(items))]
