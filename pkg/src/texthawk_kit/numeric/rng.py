"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator seeded by a
``SeedSequence``. PCG64 and numpy's normal sampler are platform independent,
so one seed gives the same bits on every machine. Named sub-streams are
derived from CRC32 of the name, so adding a parameter elsewhere does not
shift the draws of existing ones.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

ALGORITHM = "PCG64"


@dataclass(frozen=True)
class Rng:
    seed: int
    path: tuple[int, ...] = ()
    algorithm: str = ALGORITHM

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def child(self, name: str) -> "Rng":
        return Rng(self.seed, self.path + (zlib.crc32(name.encode("utf-8")),))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.seed, *self.path])))

    def normal(self, shape, std: float = 1.0, dtype=np.float32) -> np.ndarray:
        return (self.generator().standard_normal(shape) * std).astype(dtype)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, dtype=np.float32) -> np.ndarray:
        return self.generator().uniform(low, high, shape).astype(dtype)
