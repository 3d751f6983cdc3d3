"""Seeded random streams.

Every random quantity in the package comes from a :class:`Stream`, which
reads 64-bit words from a Philox-4x64 counter generator keyed by the seed.
Uniforms take the top 53 bits of a word, normals use the Box-Muller
transform on consecutive uniform pairs, and subsets are drawn with a
Fisher-Yates prefix. The transformation is written out here so the byte
stream is fixed by the seed alone.
"""

import numpy as np

_KEY_MASK = (1 << 128) - 1


class Stream:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bits = np.random.Philox(key=self.seed & _KEY_MASK)

    def words(self, count: int) -> np.ndarray:
        return self._bits.random_raw(int(count))

    def uniform(self, count: int) -> np.ndarray:
        """Uniform draws in the open interval (0, 1)."""
        w = self.words(count)
        return ((w >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        count = int(np.prod(shape, dtype=np.int64))
        half = (count + 1) // 2
        u = self.uniform(2 * half).reshape(half, 2)
        rad = np.sqrt(-2.0 * np.log(u[:, 0]))
        ang = 2.0 * np.pi * u[:, 1]
        z = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)]).reshape(-1)
        return z[:count].reshape(shape)

    def signs(self, count: int) -> np.ndarray:
        top = (self.words(count) >> np.uint64(63)).astype(float)
        return 1.0 - 2.0 * top

    def sample(self, n: int, s: int) -> np.ndarray:
        """``s`` distinct indices from ``range(n)`` in draw order."""
        if not 0 <= s <= n:
            raise ValueError(f"cannot draw {s} of {n}")
        idx = np.arange(n)
        u = self.uniform(s)
        for i in range(s):
            j = i + int(u[i] * (n - i))
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:s].copy()


def unit_block(n: int, r: int, seed: int) -> np.ndarray:
    """Random ``n x r`` block with unit Frobenius norm."""
    X = Stream(seed).normal((n, r))
    return X / np.linalg.norm(X)
