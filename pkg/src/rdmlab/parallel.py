"""Order-preserving process pool with single-threaded numerical kernels."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

from threadpoolctl import threadpool_limits

T = TypeVar("T")
R = TypeVar("R")


def _init_worker() -> None:
    threadpool_limits(1)


def parallel_map(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """``[func(x) for x in items]``, optionally spread over ``workers`` processes.

    Results come back in input order and BLAS runs single-threaded, so the
    output does not depend on the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        with threadpool_limits(1):
            return [func(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
        return list(pool.map(func, items, chunksize=chunk))
