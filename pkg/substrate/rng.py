"""
Seeded random streams.

Every source of randomness (initialization, dropout masks, latent noise,
shuffles, synthetic scenes) draws from an RngStream so that a run is a pure
function of its seed. PCG64 produces the same sequence on every platform.
"""

from typing import Sequence, Tuple, Union

import numpy as np

Shape = Union[int, Tuple[int, ...], Sequence[int]]


class RngStream:
    """
    A reproducible scalar stream built on numpy's PCG64 generator.

    Args:
        seed: 64-bit integer seed
        key: Optional path of integers that derives an independent child stream
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(entropy=self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.PCG64(sequence))

    def child(self, *key: int) -> 'RngStream':
        """Derive an independent stream; the same key always yields the same stream."""
        return RngStream(self.seed, self.key + tuple(key))

    def clone(self) -> 'RngStream':
        """Copy of this stream at its current position."""
        twin = RngStream(self.seed, self.key)
        twin._generator.bit_generator.state = self._generator.bit_generator.state
        return twin

    @property
    def state(self) -> dict:
        return self._generator.bit_generator.state

    def uniform(self, shape: Shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._generator.uniform(low, high, size=shape)

    def normal(self, shape: Shape, scale: float = 1.0) -> np.ndarray:
        return self._generator.standard_normal(size=shape) * scale

    def integers(self, low: int, high: int, size=None):
        return self._generator.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self.key})"
