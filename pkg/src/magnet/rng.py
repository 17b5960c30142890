"""Counter-based random substreams.

Every random quantity is drawn from a stream keyed by ``(seed, stream, block)``.
Latent draw ``i`` always lives in block ``i // BLOCK`` at offset ``i % BLOCK``, so
a pool of size N is the exact prefix of a pool of size N' > N and the result
does not depend on how blocks are spread over workers.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

from .errors import InputError

BLOCK = 4096

LATENT = 0
RESAMPLE = 1
ACCEPT = 2
MISC = 3

T = TypeVar("T")


def check_seed(seed) -> int:
    seed = int(seed)
    if seed < 0:
        raise InputError(f"seed must be non-negative, got {seed}")
    return seed


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def n_blocks(n: int) -> int:
    return -(-n // BLOCK)


def parallel_map(fn: Callable[[int], T], items: Iterable[int], threads: int = 1) -> list[T]:
    """Ordered map; ``threads`` only changes wall time, never results."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def derived_seeds(seed: int, count: int) -> list[int]:
    """Independent child seeds for repeated runs (MC replicates)."""
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(MISC,))
    return [int(s.generate_state(1, dtype=np.uint32)[0]) for s in ss.spawn(count)]
