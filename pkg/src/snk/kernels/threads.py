"""Reporting and pinning of worker threads used by the numeric backend."""
from __future__ import annotations

import contextlib
import os

from threadpoolctl import threadpool_info, threadpool_limits

from snk.errors import ThreadingError

THREADS_ENV = "SNK_THREADS"


def backend_threads() -> int:
    """Largest worker count any loaded BLAS/OpenMP pool is configured for."""
    pools = threadpool_info()
    return max((p["num_threads"] for p in pools), default=1)


def check_env() -> None:
    value = os.environ.get(THREADS_ENV)
    if value is not None and value.strip() != "1":
        raise ThreadingError(f"{THREADS_ENV}={value!r}; benchmarks require a single thread")


@contextlib.contextmanager
def single_thread():
    """Pin every native thread pool to one worker and verify it took effect."""
    check_env()
    with threadpool_limits(limits=1):
        n = backend_threads()
        if n != 1:
            raise ThreadingError(f"kernel backend still reports {n} threads")
        yield
