"""Thread-count control shared by the texel loops.

``MESHBOOST_THREADS`` sets the worker count (default 1).  Work is split into
fixed-size chunks whose boundaries do not depend on the worker count, and
each chunk writes only its own slice, so results are identical for every
thread count.  BLAS is pinned to one thread for the same reason.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

CHUNK = 16384


def thread_count() -> int:
    raw = os.environ.get("MESHBOOST_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MESHBOOST_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("MESHBOOST_THREADS must be >= 1")
    return n


def run_chunks(fn, n_items: int, chunk: int = CHUNK, threads: int | None = None):
    """Call ``fn(start, stop)`` over consecutive chunks of ``range(n_items)``."""
    bounds = [(s, min(s + chunk, n_items)) for s in range(0, n_items, chunk)]
    threads = thread_count() if threads is None else threads
    if threads == 1 or len(bounds) <= 1:
        for s, e in bounds:
            fn(s, e)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, s, e) for s, e in bounds]:
            fut.result()


def single_threaded_blas():
    """Context manager limiting BLAS/OpenMP pools to one thread."""
    return threadpool_limits(limits=1)
