"""Task runtime: futures, a work-stealing worker pool, and event polling.

:class:`Runtime` wires the pieces together: the registry's poll body becomes
the pool's idle hook, callback execution is counted as pool activity (so
quiescence detection sees in-flight callbacks), and shutdown abandons any
event callbacks still waiting.
"""

from __future__ import annotations

from typing import Optional

from ..errors import ShutdownError
from .futures import (
    FutureHandle,
    FutureStatus,
    PromiseHandle,
    SharedState,
    future_then,
    make_promise,
    make_ready_future,
    when_all,
)
from .polling import EventCallback, PollRegistry
from .pool import Task, WorkerPool
from ._context import blocked_region, current_worker

__all__ = [
    "FutureHandle",
    "FutureStatus",
    "PromiseHandle",
    "SharedState",
    "future_then",
    "make_promise",
    "make_ready_future",
    "when_all",
    "EventCallback",
    "PollRegistry",
    "Task",
    "WorkerPool",
    "Runtime",
    "blocked_region",
    "current_worker",
]


class Runtime:
    """A worker pool with an event-poll registry installed as its idle hook."""

    def __init__(self, worker_count: int, trace: bool = False, seed: Optional[int] = None):
        self.registry = PollRegistry()
        self.pool = WorkerPool(worker_count, trace=trace, seed=seed)
        self.pool.set_idle_hook(self.registry.poll)
        self.registry.set_activity_hooks(self.pool.activity_enter, self.pool.activity_exit)
        self.pool.add_shutdown_hook(
            lambda: self.registry.abandon_all(ShutdownError("runtime shut down")))

    def submit(self, body, label=None) -> FutureHandle:
        return self.pool.submit(body, label=label)

    def shutdown(self, drain: bool = True, timeout: float = 10.0) -> None:
        self.pool.shutdown(drain=drain, timeout=timeout)

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.shutdown()
