"""One-shot completion cells, futures and continuations.

A ``SharedState`` is the dependency-graph edge of the runtime: it flips from
Pending to Ready (or Faulted) exactly once, and every continuation attached
to it runs exactly once, no matter how attachment and completion interleave.
Continuations attached through ``then`` are re-scheduled onto the worker pool
the future is bound to; only the bare promise-set runs on the completing
thread, which keeps completers (such as the event poll body) cheap.
"""

from __future__ import annotations

import threading
from enum import Enum
from typing import Any, Callable, Optional, Sequence

from ..errors import PromiseStateError


class FutureStatus(Enum):
    PENDING = "pending"
    READY = "ready"
    FAULTED = "faulted"


class SharedState:
    """Completion cell: status, payload and the attached continuations."""

    __slots__ = ("_lock", "_cond", "status", "payload", "error", "_continuations")

    def __init__(self):
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self.status = FutureStatus.PENDING
        self.payload = None
        self.error: Optional[BaseException] = None
        self._continuations: list[Callable[[], None]] = []

    def add_continuation(self, cb: Callable[[], None]) -> None:
        """Run ``cb`` exactly once after completion (immediately if done)."""
        with self._lock:
            if self.status is FutureStatus.PENDING:
                self._continuations.append(cb)
                return
        cb()

    def _finish(self, status: FutureStatus, payload, error) -> None:
        with self._lock:
            if self.status is not FutureStatus.PENDING:
                raise PromiseStateError("promise completed twice")
            self.status = status
            self.payload = payload
            self.error = error
            pending = self._continuations
            self._continuations = []
            self._cond.notify_all()
        # Continuations run outside the lock so they may attach further ones.
        for cb in pending:
            cb()

    def complete(self, payload=None) -> None:
        self._finish(FutureStatus.READY, payload, None)

    def fault(self, error: BaseException) -> None:
        self._finish(FutureStatus.FAULTED, None, error)

    def wait(self, timeout: Optional[float] = None) -> bool:
        with self._lock:
            if self.status is not FutureStatus.PENDING:
                return True
            return self._cond.wait_for(
                lambda: self.status is not FutureStatus.PENDING, timeout
            )


class FutureHandle:
    """Cheaply clonable handle onto a SharedState.

    A handle may be bound to a worker pool; continuations attached via
    ``then`` are then executed as freshly submitted tasks instead of inline
    on the completing thread.
    """

    __slots__ = ("state", "pool")

    def __init__(self, state: SharedState, pool=None):
        self.state = state
        self.pool = pool

    def is_ready(self) -> bool:
        return self.state.status is not FutureStatus.PENDING

    @property
    def status(self) -> FutureStatus:
        return self.state.status

    def value(self):
        """Payload of a Ready future; raises the stored error if Faulted."""
        st = self.state
        if st.status is FutureStatus.FAULTED:
            raise st.error
        if st.status is FutureStatus.PENDING:
            raise RuntimeError("future is still pending")
        return st.payload

    def error(self) -> Optional[BaseException]:
        return self.state.error

    def result(self, timeout: Optional[float] = None):
        """Block the calling thread until completion and return the payload.

        Worker-thread code should prefer yielding the future from a
        suspendable task; this call parks the thread.
        """
        if not self.state.wait(timeout):
            raise TimeoutError("future did not complete within timeout")
        return self.value()

    def then(self, fn: Callable[[Any], Any], pool=None) -> "FutureHandle":
        return future_then(self, fn, pool=pool)


class PromiseHandle:
    """Producer side of a future; completing twice is a programmer error."""

    __slots__ = ("state",)

    def __init__(self, state: SharedState):
        self.state = state

    def set_result(self, value=None) -> None:
        self.state.complete(value)

    def set_error(self, error: BaseException) -> None:
        self.state.fault(error)


def make_promise(pool=None) -> tuple[PromiseHandle, FutureHandle]:
    state = SharedState()
    return PromiseHandle(state), FutureHandle(state, pool)


def _dispatch(pool, run: Callable[[], None]) -> None:
    if pool is not None:
        pool.submit_continuation(run)
    else:
        run()


def future_then(
    f: FutureHandle, fn: Callable[[Any], Any], pool=None
) -> FutureHandle:
    """Future of ``fn(f.value())``, run once ``f`` completes.

    The continuation executes on the bound worker pool when there is one
    (never inline inside the completer); a fault in ``f`` propagates to the
    returned future without invoking ``fn``.
    """
    target_pool = pool if pool is not None else f.pool
    promise, result = make_promise(target_pool)

    def run():
        if f.state.status is FutureStatus.FAULTED:
            promise.set_error(f.state.error)
            return
        try:
            promise.set_result(fn(f.state.payload))
        except BaseException as e:  # noqa: BLE001 - faults propagate via the future
            promise.set_error(e)

    f.state.add_continuation(lambda: _dispatch(target_pool, run))
    return result


def when_all(futures: Sequence[FutureHandle], pool=None) -> FutureHandle:
    """Future of the list of payloads, ready once every input is."""
    futures = list(futures)
    target_pool = pool
    if target_pool is None:
        for f in futures:
            if f.pool is not None:
                target_pool = f.pool
                break
    promise, result = make_promise(target_pool)
    if not futures:
        promise.set_result([])
        return result

    remaining = [len(futures)]
    lock = threading.Lock()

    def arm(index: int, f: FutureHandle) -> None:
        def on_done():
            if f.state.status is FutureStatus.FAULTED:
                with lock:
                    if remaining[0] <= 0:
                        return
                    remaining[0] = -1
                promise.set_error(f.state.error)
                return
            with lock:
                if remaining[0] <= 0:
                    return
                remaining[0] -= 1
                done = remaining[0] == 0
            if done:
                promise.set_result([fut.state.payload for fut in futures])

        f.state.add_continuation(on_done)

    for i, f in enumerate(futures):
        arm(i, f)
    return result


def make_ready_future(value=None, pool=None) -> FutureHandle:
    promise, fut = make_promise(pool)
    promise.set_result(value)
    return fut
