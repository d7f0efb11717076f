"""Deterministic fan-out over independent items.

Results come back in input order and every item's computation is seeded
independently of scheduling, so the worker count never changes outputs.
"""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_WORKERS = "DEEPQUALITY_WORKERS"


def worker_count(explicit=None):
    if explicit is not None:
        if explicit < 1:
            raise ValueError(f"worker count must be >= 1, got {explicit}")
        return explicit
    env = os.environ.get(ENV_WORKERS)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def map_ordered(fn, items, workers=None):
    """Apply fn to each item, preserving input order in the result list."""
    workers = worker_count(workers)
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
