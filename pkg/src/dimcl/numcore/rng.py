"""Seeded, splittable randomness.

Every consumer (data order, augmentation, initialization, ...) asks for a
named child stream, so adding draws to one consumer never shifts another.
Streams are Philox counter-based generators keyed by ``SeedSequence``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        if name < 0:
            raise ValueError("stream index must be nonnegative")
        return int(name)
    return zlib.crc32(str(name).encode("utf-8")) | (1 << 32)


@dataclass(frozen=True)
class Rng:
    seed: int
    path: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def stream(self, name) -> "Rng":
        """Independent child stream; ``name`` is a string or a nonnegative int."""
        return Rng(self.seed, self.path + (_key(name),))

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(ss))
