"""Order-preserving map over worker processes, bounded by ``REFPRIOR_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("REFPRIOR_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items):
    """``list(map(fn, items))``, fanned out when more than one worker is allowed.

    Results come back in input order, so output never depends on scheduling.
    """
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
