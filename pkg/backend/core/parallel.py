"""
Worker pool for embarrassingly parallel trial loops.
Results always come back in submission order, so reductions stay deterministic.
"""

import logging
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

from backend.core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """
    Map fn over items with up to A2LAB_THREADS processes.
    fn must be a module-level callable (or functools.partial of one).
    """
    items = list(items)
    workers = settings.A2LAB_THREADS if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Dispatching {len(items)} tasks to {workers} workers")
    chunksize = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items, chunksize=chunksize))
