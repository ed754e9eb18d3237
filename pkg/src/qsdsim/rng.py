"""Reproducible random streams.

Every stochastic routine in the package draws from an :class:`RngStream`,
which is a counter-based Philox generator keyed by a root seed and an integer
path such as ``(replica, particle, purpose)``.  Streams with distinct paths
are statistically independent, and an identical ``(seed, path)`` pair replays
the exact same draws, which is what makes replica-level runs bit-for-bit
reproducible regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Purpose tags used as the last path component.  Small named integers keep
# paths printable in summaries.
TAG_EVENTS = 1
TAG_INIT = 2
TAG_INTERNAL = 3
TAG_VOTER = 4


@dataclass(frozen=True)
class RngStream:
    """A root seed plus an integer path identifying one independent stream."""

    seed: int
    path: tuple[int, ...] = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def child(self, *indices: int) -> "RngStream":
        """Derive the stream whose path extends this one by ``indices``."""
        return RngStream(self.seed, self.path + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        """A fresh Philox generator for this (seed, path) pair.

        Calling twice returns two generators that produce identical draws.
        """
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


class UniformBlock:
    """Scalar uniforms pulled from pre-drawn blocks.

    Event loops consume one uniform at a time; drawing them in blocks of
    ``size`` amortizes the generator call overhead without changing the
    sequence of values for a fixed stream.  Values are handed out as plain
    Python floats because the consumers do scalar arithmetic.
    """

    __slots__ = ("_gen", "_size", "_buf", "_pos")

    def __init__(self, gen: np.random.Generator, size: int = 1 << 14):
        self._gen = gen
        self._size = size
        self._buf = gen.random(size).tolist()
        self._pos = 0

    def u(self) -> float:
        """Next uniform in [0, 1)."""
        if self._pos == self._size:
            self._buf = self._gen.random(self._size).tolist()
            self._pos = 0
        v = self._buf[self._pos]
        self._pos += 1
        return v

    def exp(self, rate: float) -> float:
        """Next exponential waiting time with the given rate."""
        # -log(1 - u) keeps u = 0 safe; u is in [0, 1).
        return -math.log1p(-self.u()) / rate
