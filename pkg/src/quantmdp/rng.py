"""Seeded, splittable random streams.

Every stochastic routine takes an integer seed and derives named child
streams from it, so results do not depend on call order or thread count.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode())


def stream(seed: int, *keys) -> np.random.Generator:
    """Counter-based generator for ``seed`` and a path of stream keys.

    Keys may be ints or strings; ``stream(7, "dynamics")`` and
    ``stream(7, "policy")`` are statistically independent.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
