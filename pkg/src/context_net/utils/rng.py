import zlib
from typing import Dict

import numpy as np


class RngStreams:
    """Named, splittable random streams derived from one seed.

    ``stream("augment", iteration, slot)`` always returns a generator in the
    same state for the same (seed, name, keys), independent of which other
    streams were drawn before.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._ids: Dict[str, int] = {}

    def _name_id(self, name: str) -> int:
        if name not in self._ids:
            self._ids[name] = zlib.crc32(name.encode("utf-8"))
        return self._ids[name]

    def stream(self, name: str, *keys: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self._name_id(name), *(int(k) for k in keys))
        )
        return np.random.default_rng(sequence)

    def child_seed(self, name: str, *keys: int) -> int:
        """Integer seed for components that take a plain seed"""
        return int(self.stream(name, *keys).integers(0, 2**31 - 1))
