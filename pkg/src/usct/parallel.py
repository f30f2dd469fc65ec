"""Thread-count policy for per-source solve loops.

Solves are pure and release the GIL inside FFT calls, so sources scale with
threads.  USCT_NUM_THREADS overrides the machine default; results never
depend on the worker count (accumulation stays in submission order).
"""
from __future__ import annotations

import os

ENV_VAR = "USCT_NUM_THREADS"


def worker_count(n_tasks: int) -> int:
    raw = os.environ.get(ENV_VAR)
    if raw is not None:
        n = int(raw)
        if n < 1:
            raise ValueError(f"{ENV_VAR} must be >= 1, got {raw}")
    else:
        n = os.cpu_count() or 1
    return max(1, min(n, n_tasks))
