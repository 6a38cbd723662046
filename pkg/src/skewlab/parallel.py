"""Deterministic chunk-level parallelism.

Work is split into chunks whose boundaries never depend on the worker count;
results are merged in chunk order. Integer-count reductions commute exactly,
so outputs are byte-identical for any number of workers.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(requested: int | None) -> int:
    """Map a user-facing worker count onto an actual one (0/None = all cores)."""
    if requested is None or requested == 0:
        return os.cpu_count() or 1
    if requested < 0:
        raise ValueError("workers must be >= 0")
    return requested


def chunked_map(fn, args_list, workers: int):
    """Apply fn to each args tuple, preserving input order.

    fn must be a module-level function and args picklable when workers > 1.
    """
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    with ProcessPoolExecutor(max_workers=min(workers, len(args_list))) as pool:
        futures = [pool.submit(fn, *args) for args in args_list]
        return [f.result() for f in futures]
