"""Deterministic per-replicate random streams.

Every replicate draws from a Philox (counter-based) generator keyed by
``(seed, replicate index, module tag)``, so results never depend on how
replicates are scheduled across workers.
"""
from __future__ import annotations

import zlib

import numpy as np


def tag_code(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_stream(seed: int, index: int, tag: str) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), tag_code(tag)))
    return np.random.Generator(np.random.Philox(ss))
