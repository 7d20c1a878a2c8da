"""Counter-based random streams.

Every consumer (initialisation, dataset synthesis, batch sampling) gets its
own Philox stream derived from the run seed and a stream name. Per-iteration
draws are keyed by the iteration number, so the only RNG state a resumed run
needs is the iteration counter.
"""

from __future__ import annotations

import zlib

import numpy as np


class Streams:
    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)

    def _key(self, name: str) -> int:
        return zlib.crc32(name.encode())

    def generator(self, name: str, counter: int | None = None) -> np.random.Generator:
        spawn = (self._key(name),) if counter is None else (self._key(name), int(counter))
        ss = np.random.SeedSequence(self.seed, spawn_key=spawn)
        return np.random.Generator(np.random.Philox(ss))
