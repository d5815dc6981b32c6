"""Deterministic, splittable random sources.

Every stochastic component takes an explicit generator derived from a root
seed plus a structured key, so parallel and serial execution orders produce
identical output and any single draw can be reproduced in isolation.
"""

from __future__ import annotations

import zlib

import numpy as np


def _encode_part(part: int | str) -> int:
    if isinstance(part, bool):
        raise TypeError("bool is not a valid rng key part")
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"rng key parts must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(part.encode("utf-8"))


def rng_for(seed: int, *parts: int | str) -> np.random.Generator:
    """Return a generator for the stream identified by (seed, *parts).

    The same (seed, parts) always yields the same stream; distinct keys
    yield independent streams.
    """
    key = tuple(_encode_part(p) for p in parts)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))
