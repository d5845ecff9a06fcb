import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from ribbonlim.errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "RIBBONLIM_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def thread_cap() -> int:
    """Upper bound on worker threads, from RIBBONLIM_THREADS or the CPU count."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(THREADS_ENV, f"expected a positive integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(THREADS_ENV, f"expected a positive integer, got {cap}")
    return cap


def worker_count(requested: int | None = None) -> int:
    cap = thread_cap()
    if requested is None:
        return cap
    if requested < 1:
        raise ConfigError("threads", f"expected a positive integer, got {requested}")
    return min(requested, cap)


def parallel_map(
    fn: Callable[[T], R], items: Iterable[T], threads: int | None = None
) -> list[R]:
    """Apply fn to every item on a thread pool, results in input order."""
    work = list(items)
    workers = min(worker_count(threads), len(work))
    if workers <= 1:
        return [fn(item) for item in work]
    logger.debug("mapping %d items on %d threads", len(work), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, work))
