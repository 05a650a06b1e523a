"""Deterministic chunked Monte Carlo with optional thread parallelism.

Trajectories are split into fixed-size chunks; chunk c draws from
SeedSequence(seed, spawn_key=(c,)). Results are always reduced in chunk order,
so the thread count never changes any output bit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

CHUNK = 32768
_threads: int | None = None

T = TypeVar("T")


def set_threads(n: int | None) -> None:
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get("TORWALK_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(chunk,)))


def chunk_sizes(samples: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(samples, chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn: Callable[[np.random.Generator, int, int], T], samples: int, seed: int,
               threads: int | None = None) -> list[T]:
    """Run fn(rng, size, chunk_index) over all chunks; results in chunk order."""
    sizes = chunk_sizes(samples)
    threads = threads or get_threads()
    jobs = [(i, s) for i, s in enumerate(sizes)]
    if threads <= 1 or len(jobs) <= 1:
        return [fn(chunk_rng(seed, i), s, i) for i, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(fn, chunk_rng(seed, i), s, i) for i, s in jobs]
        return [f.result() for f in futs]
