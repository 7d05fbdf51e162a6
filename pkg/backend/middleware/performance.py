"""
Performance Monitoring
Tracks slow experiments and heavy numerical kernels
"""

import functools
import logging
import time
from collections.abc import Callable
from typing import ParamSpec, TypeVar

from backend.core.config import settings

logger = logging.getLogger(__name__)

P = ParamSpec("P")
R = TypeVar("R")


def timed(label: str | None = None, threshold: float | None = None) -> Callable[[Callable[P, R]], Callable[P, R]]:
    """Log a warning when the wrapped call takes longer than threshold seconds"""

    def decorator(fn: Callable[P, R]) -> Callable[P, R]:
        name = label or fn.__name__

        @functools.wraps(fn)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
            start_time = time.perf_counter()
            result = fn(*args, **kwargs)
            process_time = time.perf_counter() - start_time

            limit = settings.A2LAB_SLOW_EXPERIMENT_SECONDS if threshold is None else threshold
            if process_time > limit:
                logger.warning(f"SLOW RUN: {name} took {process_time:.2f}s (limit {limit:.0f}s)")

            logger.debug(f"{name} - {process_time:.3f}s")
            return result

        return wrapper

    return decorator
