"""Thread-local worker context.

Lets lower layers (the virtual device's blocking wait) tell the owning pool
that the current worker thread is parked, without importing the pool module.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

_tls = threading.local()


def set_current_worker(worker) -> None:
    _tls.worker = worker


def current_worker():
    return getattr(_tls, "worker", None)


@contextmanager
def blocked_region():
    """Mark the current worker as blocked for the duration of the body.

    No-op on non-worker threads. Pools use this to exclude parked workers
    from their runnable-activity gauge, which is what lets a virtual-clock
    driver advance time while a fence wait is in progress.
    """
    worker = current_worker()
    if worker is None:
        yield
        return
    pool = worker.pool
    pool._note_blocked(1)
    try:
        yield
    finally:
        pool._note_blocked(-1)
