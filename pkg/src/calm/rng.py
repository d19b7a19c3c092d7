"""Seeded RNG with named substreams.

Each named stream is derived from (seed, crc32(name)), so toggling one
consumer (say, dropout) never perturbs the draws of another (say, the
shuffle order). crc32 is stable across platforms and processes, unlike
the builtin hash().
"""

from __future__ import annotations

import zlib

import numpy as np


class RngHub:
    """Factory for independent, reproducible numpy generators."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def stream(self, name: str) -> np.random.Generator:
        tag = zlib.crc32(name.encode("utf-8"))
        return np.random.default_rng(np.random.SeedSequence([self.seed, tag]))
