"""Seeded random streams with a fully documented normal sampler.

All randomness in the package flows through :class:`Rng`, a thin wrapper
around numpy's PCG64 bit generator. Gaussian draws are produced by an
explicit Box-Muller transform over the raw uniform stream rather than
numpy's ziggurat sampler, so the exact values of every normal draw can be
regenerated from the documented recipe (golden files stay portable).

Stream recipe for ``normal(shape)`` with ``n = prod(shape)`` samples:

1. draw ``2 * ceil(n / 2)`` uniforms ``u`` in [0, 1) with a single call to
   ``Generator.random`` on the underlying PCG64 stream;
2. for each pair ``(u[2i], u[2i+1])``:
   ``r = sqrt(-2 * log1p(-u[2i]))``,
   ``z[2i] = r * cos(2*pi*u[2i+1])``, ``z[2i+1] = r * sin(2*pi*u[2i+1])``;
3. keep the first ``n`` values, reshape row-major.

Uniform and integer draws consume the same PCG64 stream in call order.
Substreams come from ``numpy.random.SeedSequence(seed, spawn_key=(k,))``.
"""

from __future__ import annotations

import math

import numpy as np


class Rng:
    """Deterministic random source: PCG64 + Box-Muller normals."""

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(_spawn_key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def spawn(self, key: int) -> "Rng":
        """Independent substream; deterministic in (seed, spawn keys)."""
        return Rng(self.seed, self.spawn_key + (int(key),))

    def uniform(self, shape=None) -> np.ndarray:
        """Raw uniforms in [0, 1)."""
        return self._gen.random(shape)

    def integers(self, low: int, high: int, size=None):
        """Integers in [low, high), from the shared stream."""
        return self._gen.integers(low, high, size=size)

    def normal(self, shape=None) -> np.ndarray:
        """Standard normal draws via the documented Box-Muller recipe."""
        if shape is None:
            return float(self.normal((1,))[0])
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        if n == 0:
            return np.zeros(shape)
        pairs = (n + 1) // 2
        u = self._gen.random(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)
