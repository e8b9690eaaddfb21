"""Order-preserving process pool.

Workers never draw random numbers on their own: callers pre-partition any
seeds into the task arguments, and results come back in submission order, so
output is identical for every worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    value = os.environ.get("ADVFILTER_WORKERS")
    if value is None:
        return 1
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"ADVFILTER_WORKERS must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ValueError(f"ADVFILTER_WORKERS must be a positive integer, got {value!r}")
    return n


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, fanned out over ``workers`` processes when > 1."""
    items = list(items)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
