"""Per-trajectory random streams and an order-preserving parallel map.

Trajectory ``i`` of a run seeded with ``seed`` always draws from the
counter-based Philox generator keyed by ``SeedSequence(seed, spawn_key=(i,))``,
so results never depend on how trajectories are scheduled across workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


def stream(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def parallel_map(fn: Callable[[int], T], indices: Sequence[int], workers: int = 1) -> list[T]:
    """Evaluate ``fn`` on each index, returning results in index order.

    ``fn`` must be picklable when ``workers > 1``.
    """
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return [fn(i) for i in indices]
    chunk = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices, chunksize=chunk))
