"""Deterministic thread helpers.

Work is split into fixed-size chunks and the chunk results are merged in
index order, so the output is byte-identical for any PSHKIT_THREADS value.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_CHUNK = 4096


def thread_count():
    raw = os.environ.get("PSHKIT_THREADS", "").strip()
    if not raw:
        return 1
    try:
        nthreads = int(raw)
    except ValueError:
        raise ValueError(f"PSHKIT_THREADS must be an integer, got {raw!r}")
    if nthreads < 1:
        raise ValueError(f"PSHKIT_THREADS must be >= 1, got {nthreads}")
    return nthreads


def map_chunks(fn, total, nthreads=None):
    """Run fn(lo, hi) over fixed [lo, hi) chunks; return results in order.

    The chunk size never depends on the thread count, so per-chunk float
    reductions associate identically no matter how the chunks were
    scheduled.
    """
    if nthreads is None:
        nthreads = thread_count()
    bounds = [(lo, min(lo + _CHUNK, total)) for lo in range(0, total, _CHUNK)]
    if not bounds:
        return []
    if nthreads == 1 or len(bounds) == 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=nthreads) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]
