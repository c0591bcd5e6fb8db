"""Seeded random streams.

Every chain draws from numpy's Philox4x64 counter-based generator keyed by
the 128-bit pair ``(seed, stream)``, and consumes only uniform doubles from
``Generator.random`` (53-bit resolution).  Discrete draws are derived from
those uniforms in documented ways, so a trace depends only on the key and
the draw order, not on numpy's integer-sampling internals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream", "UniformStream"]


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def uniforms(self, n: int) -> np.ndarray:
        """The first ``n`` uniforms of the stream."""
        return self.generator().random(n)


class UniformStream:
    """Sequential reader over a stream's uniforms, refilled in blocks.

    Block size does not affect the values: ``Generator.random(n)`` yields
    the same doubles as ``n`` scalar calls.
    """

    def __init__(self, rng: RngStream, block: int = 4096):
        self._gen = rng.generator()
        self._block = block
        self._buf = np.empty(0)
        self._pos = 0
        self.consumed = 0

    def next(self) -> float:
        if self._pos >= self._buf.shape[0]:
            self._buf = self._gen.random(self._block)
            self._pos = 0
        u = float(self._buf[self._pos])
        self._pos += 1
        self.consumed += 1
        return u

    def index(self, n: int) -> int:
        """Uniform index in ``range(n)`` as ``floor(u * n)``."""
        return min(int(self.next() * n), n - 1)
