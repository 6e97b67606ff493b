"""Worker pool: per-worker deques, a shared injector, random-victim stealing.

Tasks are plain callables or generators. A generator task may yield a
FutureHandle; if it is still pending the task suspends, the worker moves on
to other work, and a continuation re-submits the generator once the future
completes. Workers invoke the installed idle hook (normally the poll body of
a :class:`~taskbridge.runtime.polling.PollRegistry`) between task executions
and, with exponential backoff capped at 100 microseconds, while idle.
"""

from __future__ import annotations

import random
import threading
import time
from collections import deque
from time import perf_counter
from typing import Callable, Optional

from ..errors import ShutdownError
from . import _context
from .futures import FutureHandle, FutureStatus, make_promise

_IDLE_SLEEP_MIN = 5e-6
_IDLE_SLEEP_CAP = 100e-6


class Task:
    """Unit of work; ``suspendable`` marks generator bodies that may yield."""

    __slots__ = ("body", "suspendable", "label")

    def __init__(self, body: Callable, suspendable: bool = True, label=None):
        self.body = body
        self.suspendable = suspendable
        self.label = label


class _Slice:
    """One schedulable piece: a fresh task, a generator resume, or a bare
    continuation callback."""

    __slots__ = ("kind", "fn", "gen", "promise", "resume_future", "label")

    def __init__(self, kind, fn=None, gen=None, promise=None, resume_future=None, label=None):
        self.kind = kind  # "task" | "resume" | "cont"
        self.fn = fn
        self.gen = gen
        self.promise = promise
        self.resume_future = resume_future
        self.label = label


class _Worker:
    __slots__ = ("pool", "index", "deque", "thread", "busy_seconds", "rng")

    def __init__(self, pool, index, seed):
        self.pool = pool
        self.index = index
        self.deque: deque[_Slice] = deque()
        self.busy_seconds = 0.0
        self.rng = random.Random(seed)
        self.thread = threading.Thread(
            target=pool._worker_loop, args=(self,), name=f"tb-worker-{index}", daemon=True
        )


class WorkerPool:
    """Fixed-size pool executing submitted tasks until shut down."""

    def __init__(self, worker_count: int, idle_hook: Optional[Callable[[], int]] = None,
                 trace: bool = False, seed: Optional[int] = None):
        if worker_count < 1:
            raise ValueError("worker_count must be >= 1")
        self.worker_count = worker_count
        self._idle_hook = idle_hook
        self._injector: deque[_Slice] = deque()
        self._alive = True
        self._accepting = True
        self._counter_lock = threading.Lock()
        self._active = 0          # slices queued or executing
        self._executing = 0       # workers currently inside a slice
        self._blocked = 0         # workers parked inside a blocking wait
        self._shutdown_hooks: list[Callable[[], None]] = []
        self.trace_log: Optional[list] = [] if trace else None
        base_seed = seed if seed is not None else random.randrange(1 << 30)
        self._workers = [_Worker(self, i, base_seed + i) for i in range(worker_count)]
        for w in self._workers:
            w.thread.start()

    # ------------------------------------------------------------------ api

    def set_idle_hook(self, hook: Callable[[], int]) -> None:
        """Install the function workers run between tasks and while idle."""
        self._idle_hook = hook

    def add_shutdown_hook(self, fn: Callable[[], None]) -> None:
        self._shutdown_hooks.append(fn)

    def submit(self, body: Callable, label=None) -> FutureHandle:
        """Schedule a task; its future completes with the body's result.

        Generator bodies run as suspendable tasks. Raises ShutdownError once
        the pool no longer accepts external work.
        """
        if not self._accepting:
            raise ShutdownError("pool is shut down")
        return self._submit_task(body, label)

    def submit_task(self, task: Task) -> FutureHandle:
        if not self._accepting:
            raise ShutdownError("pool is shut down")
        return self._submit_task(task.body, task.label)

    def submit_continuation(self, run: Callable[[], None]) -> None:
        """Internal path for continuation trampolines; allowed during drain."""
        if not self._alive:
            # Last resort: the pool is gone, run inline rather than drop.
            run()
            return
        self._push(_Slice("cont", fn=run))

    def activity_enter(self) -> None:
        with self._counter_lock:
            self._active += 1

    def activity_exit(self) -> None:
        with self._counter_lock:
            self._active -= 1

    def runnable_activity(self) -> int:
        """Queued or executing slices, excluding workers parked in waits."""
        with self._counter_lock:
            return self._active - self._blocked

    def progressable_activity(self) -> int:
        """Slices that can make progress without any external completion.

        Executing slices count unless their worker is parked in a blocking
        wait. Queued slices count only while a worker is free to take them:
        when every worker is occupied and blocked, the backlog cannot start
        until something (a clock advance) wakes a worker, so it must not
        hold a virtual clock back.
        """
        with self._counter_lock:
            n = self._executing - self._blocked
            if self._executing < self.worker_count:
                n += self._active - self._executing
            return n

    def worker_threads(self) -> set:
        return {w.thread for w in self._workers}

    def busy_seconds(self) -> float:
        return sum(w.busy_seconds for w in self._workers)

    def shutdown(self, drain: bool = True, timeout: float = 10.0) -> None:
        """Stop accepting work, settle in-flight tasks, abandon leftovers.

        Pending event callbacks registered against this runtime are failed
        via the installed shutdown hooks, so their futures end up Faulted
        rather than leaked.
        """
        self._accepting = False
        deadline = time.monotonic() + timeout
        if drain:
            self._wait_quiet(deadline)
        for hook in self._shutdown_hooks:
            hook()
        if drain:
            self._wait_quiet(deadline)  # settle the abandon cascade
        self._alive = False
        for w in self._workers:
            w.thread.join(timeout=2.0)

    # ------------------------------------------------------------- internals

    def _wait_quiet(self, deadline: float) -> None:
        while time.monotonic() < deadline:
            with self._counter_lock:
                if self._active - self._blocked == 0:
                    return
            time.sleep(100e-6)

    def _note_blocked(self, delta: int) -> None:
        with self._counter_lock:
            self._blocked += delta

    def _submit_task(self, body: Callable, label) -> FutureHandle:
        promise, fut = make_promise(self)
        self._push(_Slice("task", fn=body, promise=promise, label=label))
        return fut

    def _push(self, sl: _Slice) -> None:
        self.activity_enter()
        worker = _context.current_worker()
        if worker is not None and worker.pool is self:
            worker.deque.append(sl)
        else:
            self._injector.append(sl)

    def _take(self, worker: _Worker) -> Optional[_Slice]:
        try:
            return worker.deque.popleft()
        except IndexError:
            pass
        try:
            return self._injector.popleft()
        except IndexError:
            pass
        if self.worker_count > 1:
            victim = self._workers[worker.rng.randrange(self.worker_count)]
            if victim is not worker:
                try:
                    return victim.deque.pop()
                except IndexError:
                    pass
        return None

    def _worker_loop(self, worker: _Worker) -> None:
        _context.set_current_worker(worker)
        sleep_for = _IDLE_SLEEP_MIN
        while self._alive:
            sl = self._take(worker)
            if sl is not None:
                start = perf_counter()
                with self._counter_lock:
                    self._executing += 1
                try:
                    self._run_slice(worker, sl)
                finally:
                    worker.busy_seconds += perf_counter() - start
                    with self._counter_lock:
                        self._executing -= 1
                        self._active -= 1
                sleep_for = _IDLE_SLEEP_MIN
                if self._idle_hook is not None:
                    self._idle_hook()
                continue
            fired = self._idle_hook() if self._idle_hook is not None else 0
            if fired:
                sleep_for = _IDLE_SLEEP_MIN
                continue
            time.sleep(sleep_for)
            sleep_for = min(sleep_for * 2, _IDLE_SLEEP_CAP)

    def _run_slice(self, worker: _Worker, sl: _Slice) -> None:
        if self.trace_log is not None and sl.label is not None:
            self.trace_log.append((worker.index, sl.label))
        if sl.kind == "cont":
            try:
                sl.fn()
            except BaseException:  # noqa: BLE001 - continuation faults land in futures
                pass
            return
        if sl.kind == "task":
            try:
                result = sl.fn()
            except BaseException as e:  # noqa: BLE001
                sl.promise.set_error(e)
                return
            if hasattr(result, "send") and hasattr(result, "throw"):
                self._drive(result, sl.promise, sl.label, None, None)
            else:
                sl.promise.set_result(result)
            return
        # resume: feed the awaited future's outcome back into the generator
        fut = sl.resume_future
        if fut.state.status is FutureStatus.FAULTED:
            self._drive(sl.gen, sl.promise, sl.label, None, fut.state.error)
        else:
            self._drive(sl.gen, sl.promise, sl.label, fut.state.payload, None)

    def _drive(self, gen, promise, label, send_value, throw_exc) -> None:
        """Advance a generator task until it finishes or suspends."""
        while True:
            try:
                if throw_exc is not None:
                    yielded = gen.throw(throw_exc)
                else:
                    yielded = gen.send(send_value)
            except StopIteration as stop:
                promise.set_result(stop.value)
                return
            except BaseException as e:  # noqa: BLE001
                promise.set_error(e)
                return
            throw_exc = None
            if not isinstance(yielded, FutureHandle):
                promise.set_error(TypeError(
                    f"suspendable task must yield FutureHandle, got {type(yielded)!r}"))
                return
            if yielded.is_ready():
                if yielded.state.status is FutureStatus.FAULTED:
                    throw_exc = yielded.state.error
                    send_value = None
                else:
                    send_value = yielded.state.payload
                continue
            # Suspend: the worker is free; completion re-submits the resume.
            resume = _Slice("resume", gen=gen, promise=promise,
                            resume_future=yielded, label=label)
            yielded.state.add_continuation(lambda sl=resume: self._push(sl))
            return
