"""
Seeded random streams with labelled forks
"""

import hashlib
from typing import Tuple

import numpy as np


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


class SeededRng:
    """
    Deterministic random stream.

    Identical seeds give identical streams. `fork(label)` derives an
    independent stream from the seed and the label path only, so forking
    never consumes from (or depends on the position of) the parent stream.
    """

    def __init__(self, seed: int, path: Tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=self.seed, spawn_key=self.path))
        )
        self.draws = 0

    def fork(self, label: str) -> "SeededRng":
        """Independent child stream named by label"""
        return SeededRng(self.seed, self.path + (_label_key(label),))

    def normal(self, loc=0.0, scale=1.0, size=None):
        self.draws += 1
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        self.draws += 1
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        self.draws += 1
        return self.generator.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        self.draws += 1
        return self.generator.choice(a, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, path={self.path}, draws={self.draws})"
