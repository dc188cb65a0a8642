"""Seeded sampling with a version-stable stream.

The bit stream is PCG64 seeded through ``numpy.random.SeedSequence``; both are
documented algorithms with fixed output across platforms and numpy releases.
Only raw 64-bit words are consumed (numpy's higher-level samplers may change
between releases):

* uniform doubles in [0, 1): ``(word >> 11) * 2**-53``
* normals: Box-Muller on pairs of uniforms, ``u1`` mapped to (0, 1]
* integers in [0, n): ``floor(uniform * n)``
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError

_TWO_NEG_53 = 2.0**-53


class Rng:
    """Explicitly advanced random stream. Never share one across threads."""

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._bits = np.random.PCG64(ss)

    def derive(self, *key: int) -> "Rng":
        """Independent child stream; does not advance this one."""
        return Rng(self.seed, self.key + tuple(key))

    def uniform(self, n: int) -> np.ndarray:
        if n == 0:
            return np.empty(0)
        words = self._bits.random_raw(n)
        return (words >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def integers(self, high: int, size: int) -> np.ndarray:
        if high < 1:
            raise ParameterError(f"integers needs high >= 1, got {high}")
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def gaussian_sample(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ParameterError(f"std must be >= 0, got {std}")
    draws = rng.normal(rows * cols).reshape(rows, cols)
    return mean + std * draws
