"""Deterministic fan-out helper.

Work units must be pure functions of their arguments (each owning its own
rng stream), so the result list is identical for any worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence


def default_workers() -> int:
    env = os.environ.get("ERGOSTAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def pmap(fn: Callable, items: Sequence, workers: int = 1) -> list:
    """Map preserving input order; processes are used only when workers > 1."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
