"""Per-sample work distribution.

Kernels hand ``parallel_for`` one task per segment. Every task writes a
disjoint slice of a preallocated output and reduces in a fixed order, so
results are bit-identical for any thread count.
"""

from __future__ import annotations

import contextlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator

_num_threads = 1


def get_num_threads() -> int:
    return _num_threads


def set_num_threads(n: int) -> None:
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


@contextlib.contextmanager
def num_threads(n: int) -> Iterator[None]:
    prev = _num_threads
    set_num_threads(n)
    try:
        yield
    finally:
        set_num_threads(prev)


def parallel_for(fn: Callable[[int], None], n: int) -> None:
    workers = min(_num_threads, n)
    if workers <= 1:
        for i in range(n):
            fn(i)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # list() re-raises the first task exception
        list(pool.map(fn, range(n)))
