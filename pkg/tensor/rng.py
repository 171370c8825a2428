import zlib
from typing import Sequence, Tuple, Union

import numpy as np

SplitKey = Union[int, str]


def _key_to_int(key: SplitKey) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode('utf-8'))
    if key < 0:
        raise ValueError(f'split keys must be non-negative, got {key}')
    return int(key)


class Rng:
    """Seeded random stream.

    Child streams come from ``split(key)``: the child is a pure function of ``(seed, path + (key,))`` so it does
    not depend on, or advance, the parent's own draws.
    """

    def __init__(self, seed: int, path: Sequence[int] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.path: Tuple[int, ...] = tuple(path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def __repr__(self) -> str:
        return f'Rng(seed={self.seed}, path={self.path})'

    def split(self, key: SplitKey) -> 'Rng':
        return Rng(self.seed, self.path + (_key_to_int(key),))

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._generator.standard_normal(shape) * std

    def truncated_normal(self, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
        """Normal draws with anything beyond ``bound`` standard deviations redrawn."""
        values = self._generator.standard_normal(shape)
        outside = np.abs(values) > bound
        while outside.any():
            values[outside] = self._generator.standard_normal(int(outside.sum()))
            outside = np.abs(values) > bound
        return values * std

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices out of ``range(n)``, uniformly, in sorted order."""
        return np.sort(self._generator.choice(n, size=k, replace=False))

    def bernoulli(self, p: float, size=None) -> np.ndarray:
        return self._generator.random(size) < p

    def gamma(self, shape_param, size=None) -> np.ndarray:
        return self._generator.standard_gamma(shape_param, size)

    def dirichlet(self, alpha: Sequence[float]) -> np.ndarray:
        """Dirichlet draw built as normalized independent Gamma(alpha_i, 1) variates."""
        alpha = np.asarray(alpha, dtype=np.float64)
        draws = self.gamma(alpha)
        total = draws.sum()
        if total <= 0.0:
            # all gammas underflowed (tiny alpha): fall back to a vertex chosen proportionally to alpha
            draws = np.zeros_like(alpha)
            draws[self._generator.choice(len(alpha), p=alpha / alpha.sum())] = 1.0
            total = 1.0
        return draws / total
