"""Deterministic fan-out of replicate blocks over a process pool.

Replicates are split into contiguous blocks, each block is evaluated by a
module-level function, and the block results are concatenated in index
order. Because every replicate owns its own random stream, the output does
not depend on the number of workers.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Callable, Sequence

import numpy as np


def blocks(ids: Sequence[int], workers: int, min_block: int = 16) -> list[list[int]]:
    ids = list(ids)
    if workers <= 1 or len(ids) <= min_block:
        return [ids]
    nblocks = min(len(ids) // min_block, 4 * workers)
    return [list(b) for b in np.array_split(np.asarray(ids), max(nblocks, 1)) if len(b)]


def map_blocks(func: Callable, ids: Sequence[int], workers: int = 1, **kwargs) -> list:
    """Evaluate ``func(block, **kwargs)`` on every block; results in block order."""
    parts = blocks(ids, workers)
    if workers <= 1 or len(parts) == 1:
        return [func(b, **kwargs) for b in parts]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(partial(func, **kwargs), parts))
