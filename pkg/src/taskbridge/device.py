"""Simulated accelerator: in-order command queues, events, and a latency model.

The device is a discrete-event engine. Ops start as soon as their queue head
and (for kernels) a device-wide compute slot allow, and complete after a
duration given by the latency model. Two clock disciplines exist:

* ``RealTime``: completion processing runs on one device-simulator thread
  against the wall clock; this is the mode benchmarks time.
* ``Virtual``: nothing completes until a caller advances the clock
  explicitly, which makes timelines exactly reproducible in tests.

Op compute closures are pure host-buffer transforms. They run exactly once
at op start, on whichever thread triggers the start (submitter, simulator
thread, or the clock-advancing caller); in-order queues make the resulting
data effects independent of that choice. Closures must not call device APIs.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import threading
from collections import deque
from dataclasses import dataclass
from time import perf_counter
from typing import Callable, Optional

import numpy as np

from .errors import DeviceGoneError, ModeError
from .runtime import _context


def _spin(seconds: float) -> None:
    """Burn wall time; models host-side API cost without releasing the core."""
    if seconds <= 0:
        return
    end = perf_counter() + seconds
    while perf_counter() < end:
        pass


class ClockMode(enum.Enum):
    REAL = "real"
    VIRTUAL = "virtual"


class OpKind(enum.Enum):
    KERNEL = "kernel"
    COPY_H2D = "h2d"
    COPY_D2H = "d2h"
    BARRIER = "barrier"
    DUMMY = "dummy"


class EventStatus(enum.Enum):
    SUBMITTED = 0
    RUNNING = 1
    COMPLETE = 2


@dataclass(frozen=True)
class LatencyModel:
    """Synthetic op durations, in seconds. Not calibrated to any hardware."""

    kernel_fixed: float = 50e-6       # per-launch overhead, the alpha term
    kernel_per_item: float = 0.05e-6  # beta per work item
    copy_per_byte: float = 0.2e-9
    barrier_cost: float = 10e-6
    submit_cost: float = 3e-6         # host-side API call cost
    event_alloc_cost: float = 1e-6

    def duration_of(self, kind: "OpKind", work_items: int, nbytes: int) -> float:
        if kind is OpKind.KERNEL:
            return self.kernel_fixed + self.kernel_per_item * work_items
        if kind in (OpKind.COPY_H2D, OpKind.COPY_D2H):
            return nbytes * self.copy_per_byte
        if kind is OpKind.BARRIER:
            return self.barrier_cost
        return self.kernel_fixed  # dummy single-task: launch overhead only


class DeviceEvent:
    """Completion token. Status is set only by the device engine and is
    monotone Submitted -> Running -> Complete; queries never block."""

    __slots__ = ("id", "_status", "completion_time", "_followers")

    _ids = itertools.count()

    def __init__(self):
        self.id = next(DeviceEvent._ids)
        self._status = EventStatus.SUBMITTED
        self.completion_time: Optional[float] = None
        self._followers: Optional[list] = None  # events aliased by barrier elision

    @property
    def status(self) -> EventStatus:
        return self._status

    def is_complete(self) -> bool:
        return self._status is EventStatus.COMPLETE


class DeviceOp:
    __slots__ = ("kind", "work_items", "nbytes", "compute", "event", "queue",
                 "index", "start_time", "held")

    def __init__(self, kind: OpKind, work_items: int = 0, nbytes: int = 0,
                 compute: Optional[Callable[[], None]] = None):
        self.kind = kind
        self.work_items = work_items
        self.nbytes = nbytes
        self.compute = compute
        self.event = DeviceEvent()
        self.queue: Optional["DeviceQueue"] = None
        self.index: Optional[int] = None  # position in its queue's submit order
        self.start_time: Optional[float] = None
        self.held = False  # lazy-submit mode: parked until flush


def make_kernel(work_items: int, compute=None) -> DeviceOp:
    return DeviceOp(OpKind.KERNEL, work_items=work_items, compute=compute)


def make_h2d(nbytes: int, compute=None) -> DeviceOp:
    return DeviceOp(OpKind.COPY_H2D, nbytes=nbytes, compute=compute)


def make_d2h(nbytes: int, compute=None) -> DeviceOp:
    return DeviceOp(OpKind.COPY_D2H, nbytes=nbytes, compute=compute)


def make_barrier() -> DeviceOp:
    return DeviceOp(OpKind.BARRIER)


def make_dummy() -> DeviceOp:
    return DeviceOp(OpKind.DUMMY)


class DeviceBuffer:
    """Host-visible unified memory region; contents change only via ops."""

    __slots__ = ("id", "size_bytes", "host_mirror")

    def __init__(self, buf_id: int, size_bytes: int):
        self.id = buf_id
        self.size_bytes = size_bytes
        self.host_mirror = np.zeros(size_bytes, dtype=np.uint8)

    def f64(self) -> np.ndarray:
        return self.host_mirror.view(np.float64)


class DeviceQueue:
    """In-order command stream: op k+1 never starts before op k completes."""

    __slots__ = ("device", "id", "_backlog", "_active", "_submit_count",
                 "_slot_waiting", "_last_real_event")

    def __init__(self, device: "VirtualDevice", queue_id: int):
        self.device = device
        self.id = queue_id
        self._backlog: deque[DeviceOp] = deque()
        self._active: Optional[DeviceOp] = None
        self._submit_count = 0
        self._slot_waiting = False
        self._last_real_event: Optional[DeviceEvent] = None

    @property
    def in_order(self) -> bool:
        return True

    def submit(self, op: DeviceOp) -> DeviceEvent:
        return self.device._submit(self, op)

    def incomplete_count(self) -> int:
        return len(self._backlog) + (1 if self._active is not None else 0)


class _Counters:
    __slots__ = ("kernels", "h2d", "d2h", "barriers", "barriers_elided",
                 "dummies", "event_waits", "hosttask_dispatched")

    def __init__(self):
        for f in self.__slots__:
            setattr(self, f, 0)

    def snapshot(self) -> dict:
        d = {f: getattr(self, f) for f in self.__slots__}
        d["transfers"] = d["h2d"] + d["d2h"]
        return d


class VirtualDevice:
    """Deterministic virtual accelerator shared by all executors.

    At most ``compute_slots`` kernels run concurrently device-wide; copies,
    barriers, and dummy tasks bypass the slot cap so the cap models kernel
    occupancy rather than DMA engines.
    """

    def __init__(self, compute_slots: int = 16,
                 clock_mode: ClockMode = ClockMode.VIRTUAL,
                 latency: Optional[LatencyModel] = None,
                 hosttask_threads: int = 2,
                 hosttask_dispatch_cost: float = 250e-6,
                 barrier_elision: bool = False,
                 lazy_submit: bool = False,
                 event_pool: bool = False,
                 record_timeline: bool = False):
        if compute_slots < 1:
            raise ValueError("compute_slots must be >= 1")
        self.compute_slots = compute_slots
        self.clock_mode = clock_mode
        self.latency = latency or LatencyModel()
        self.barrier_elision = barrier_elision
        self.lazy_submit = lazy_submit
        self.event_pool = event_pool  # internal event pool: alloc cost becomes 0
        self.hosttask_dispatch_cost = hosttask_dispatch_cost
        self.record_timeline = record_timeline
        self.timeline: list = []  # (queue_id, op_index, kind, start, completion)

        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._alive = True
        self._now = 0.0  # virtual clock; unused in REAL mode
        self._heap: list = []  # (completion_time, seq, op)
        self._seq = itertools.count()
        self._queues: list[DeviceQueue] = []
        self._running_kernels = 0
        self._slot_heap: list = []  # (ready_time, queue.id, queue)
        self._waiters: dict[DeviceEvent, int] = {}
        self._host_tasks: dict[int, list] = {}  # event id -> [(cb, on_abandon)]
        self._buffer_ids = itertools.count()
        self.counters = _Counters()

        self._ht_lock = threading.Lock()
        self._ht_cv = threading.Condition(self._ht_lock)
        self._ht_queue: deque = deque()
        self._ht_active = 0
        self._ht_threads = [
            threading.Thread(target=self._hosttask_loop, name=f"tb-hosttask-{i}", daemon=True)
            for i in range(hosttask_threads)
        ]
        for t in self._ht_threads:
            t.start()

        self._sim_thread: Optional[threading.Thread] = None
        if clock_mode is ClockMode.REAL:
            self._sim_thread = threading.Thread(
                target=self._sim_loop, name="tb-device-sim", daemon=True)
            self._sim_thread.start()

    # ----------------------------------------------------------------- public

    def queue(self) -> DeviceQueue:
        with self._lock:
            q = DeviceQueue(self, len(self._queues))
            self._queues.append(q)
            return q

    def alloc_buffer(self, size_bytes: int) -> DeviceBuffer:
        if size_bytes <= 0:
            raise ValueError("size_bytes must be > 0")
        return DeviceBuffer(next(self._buffer_ids), size_bytes)

    def now(self) -> float:
        return self._now if self.clock_mode is ClockMode.VIRTUAL else perf_counter()

    def set_barrier_elision(self, enabled: bool) -> None:
        self.barrier_elision = enabled

    def event_status(self, event: DeviceEvent) -> EventStatus:
        if self.lazy_submit and event._status is EventStatus.SUBMITTED:
            self.flush()  # first status query kicks the lazy scheduler
        return event._status

    def event_wait(self, event: DeviceEvent) -> None:
        """Block the calling thread until the event completes (fence cost)."""
        worker = _context.current_worker()
        pool = worker.pool if worker is not None else None
        with self._lock:
            self.counters.event_waits += 1
            if event._status is EventStatus.COMPLETE:
                return
            if self.lazy_submit:
                self._flush_locked()
            self._waiters[event] = self._waiters.get(event, 0) + 1
            if pool is not None:
                pool._note_blocked(+1)
            try:
                while event._status is not EventStatus.COMPLETE:
                    if not self._alive:
                        raise DeviceGoneError("device destroyed while waiting")
                    self._cv.wait(0.005)
            finally:
                # Exit blocked accounting and waiter registration atomically
                # under the device lock, so a clock pump never advances in the
                # window between wake-up and resumption.
                if pool is not None:
                    pool._note_blocked(-1)
                n = self._waiters[event] - 1
                if n:
                    self._waiters[event] = n
                else:
                    del self._waiters[event]

    def register_host_task(self, event: DeviceEvent, cb: Callable[[], None],
                           on_abandon: Optional[Callable] = None) -> None:
        """Run cb exactly once on a device-runtime thread after completion."""
        with self._lock:
            if not self._alive:
                raise DeviceGoneError("device destroyed")
            if event._status is EventStatus.COMPLETE:
                self._ht_enqueue([(cb, on_abandon)])
                return
            self._host_tasks.setdefault(event.id, []).append((cb, on_abandon))

    def advance(self, dt: float) -> None:
        """Virtual mode only: complete everything due within the next dt."""
        if self.clock_mode is not ClockMode.VIRTUAL:
            raise ModeError("advance requires ClockMode.VIRTUAL")
        if dt < 0:
            raise ValueError("dt must be >= 0")
        with self._lock:
            target = self._now + dt
            self._process_due(target)
            self._now = target

    def advance_to_next(self) -> bool:
        """Advance exactly to the earliest pending completion; False if none."""
        if self.clock_mode is not ClockMode.VIRTUAL:
            raise ModeError("advance requires ClockMode.VIRTUAL")
        with self._lock:
            if not self._heap:
                return False
            t = self._heap[0][0]
            self._process_due(t)
            self._now = max(self._now, t)
            return True

    def flush(self) -> None:
        """Start any ops parked by lazy-submit mode."""
        with self._lock:
            self._flush_locked()

    def has_pending(self) -> bool:
        with self._lock:
            return bool(self._heap)

    def hosttask_backlog(self) -> int:
        with self._ht_lock:
            return len(self._ht_queue) + self._ht_active

    def safe_to_advance(self, runnable: Callable[[], int]) -> bool:
        """Quiescence gate for virtual clock pumps: no host-side work is in
        flight or about to be (pending host tasks, wakeable fence waiters,
        runnable pool activity)."""
        with self._lock:
            with self._ht_lock:
                if self._ht_queue or self._ht_active:
                    return False
            for ev, n in self._waiters.items():
                if n > 0 and ev._status is EventStatus.COMPLETE:
                    return False
            return runnable() == 0

    def hosttask_thread_set(self) -> set:
        return {t for t in self._ht_threads}

    def snapshot_counters(self) -> dict:
        with self._lock:
            return self.counters.snapshot()

    def destroy(self) -> None:
        with self._lock:
            if not self._alive:
                return
            self._alive = False
            abandoned = []
            for entries in self._host_tasks.values():
                abandoned.extend(entries)
            self._host_tasks.clear()
            self._cv.notify_all()
        with self._ht_lock:
            abandoned.extend(self._ht_queue)
            self._ht_queue.clear()
            self._ht_cv.notify_all()
        for _cb, on_abandon in abandoned:
            if on_abandon is not None:
                try:
                    on_abandon(DeviceGoneError("device destroyed"))
                except BaseException:  # noqa: BLE001
                    pass
        if self._sim_thread is not None:
            self._sim_thread.join(timeout=2.0)
        for t in self._ht_threads:
            t.join(timeout=2.0)

    # ------------------------------------------------------------ the engine

    def _submit(self, queue: DeviceQueue, op: DeviceOp) -> DeviceEvent:
        if op.queue is not None:
            raise ValueError("op already submitted")
        if self.clock_mode is ClockMode.REAL:
            cost = self.latency.submit_cost
            if not self.event_pool:
                cost += self.latency.event_alloc_cost
            _spin(cost)
        with self._lock:
            if not self._alive:
                raise DeviceGoneError("device destroyed")
            op.queue = queue
            op.index = queue._submit_count
            queue._submit_count += 1
            if op.kind is OpKind.BARRIER and self.barrier_elision:
                # The queue is in-order, so the barrier is redundant: drop it
                # and let its event ride on the newest real op.
                self.counters.barriers_elided += 1
                tail = queue._last_real_event
                if tail is None or tail._status is EventStatus.COMPLETE:
                    op.event._status = EventStatus.COMPLETE
                    op.event.completion_time = self.now()
                    self._cv.notify_all()
                else:
                    if tail._followers is None:
                        tail._followers = []
                    tail._followers.append(op.event)
                return op.event
            queue._last_real_event = op.event
            op.held = self.lazy_submit
            queue._backlog.append(op)
            if not op.held:
                self._kick(queue, self.now())
            self._cv.notify_all()
            return op.event

    def _flush_locked(self) -> None:
        if not self.lazy_submit:
            return
        t = self.now()
        for q in self._queues:
            dirty = False
            for op in q._backlog:
                if op.held:
                    op.held = False
                    dirty = True
            if dirty:
                self._kick(q, t)
        self._cv.notify_all()

    def _kick(self, queue: DeviceQueue, t: float) -> None:
        if queue._active is not None or not queue._backlog:
            return
        head = queue._backlog[0]
        if head.held:
            return
        if head.kind is OpKind.KERNEL and self._running_kernels >= self.compute_slots:
            if not queue._slot_waiting:
                queue._slot_waiting = True
                # Grant order: who has waited longest, queue id breaking ties,
                # so the schedule is independent of submission thread races.
                heapq.heappush(self._slot_heap, (t, queue.id, queue))
            return
        self._start(queue, t)

    def _start(self, queue: DeviceQueue, t: float) -> None:
        op = queue._backlog.popleft()
        queue._active = op
        op.start_time = t
        op.event._status = EventStatus.RUNNING
        c = self.counters
        if op.kind is OpKind.KERNEL:
            self._running_kernels += 1
            c.kernels += 1
        elif op.kind is OpKind.COPY_H2D:
            c.h2d += 1
        elif op.kind is OpKind.COPY_D2H:
            c.d2h += 1
        elif op.kind is OpKind.BARRIER:
            c.barriers += 1
        else:
            c.dummies += 1
        if op.compute is not None:
            op.compute()
        dur = self.latency.duration_of(op.kind, op.work_items, op.nbytes)
        heapq.heappush(self._heap, (t + dur, next(self._seq), op))

    def _process_due(self, t: float) -> None:
        while self._heap and self._heap[0][0] <= t:
            time_, _, op = heapq.heappop(self._heap)
            if self.clock_mode is ClockMode.VIRTUAL:
                self._now = max(self._now, time_)
            self._complete(op, time_)

    def _complete(self, op: DeviceOp, t: float) -> None:
        ev = op.event
        ev.completion_time = t
        ev._status = EventStatus.COMPLETE
        dispatch = self._host_tasks.pop(ev.id, None)
        if ev._followers:
            for f in ev._followers:
                f.completion_time = t
                f._status = EventStatus.COMPLETE
                extra = self._host_tasks.pop(f.id, None)
                if extra:
                    dispatch = (dispatch or []) + extra
            ev._followers = None
        if self.record_timeline:
            self.timeline.append((op.queue.id, op.index, op.kind.value,
                                  op.start_time, t))
        queue = op.queue
        queue._active = None
        if op.kind is OpKind.KERNEL:
            self._running_kernels -= 1
        self._kick(queue, t)
        while self._slot_heap and self._running_kernels < self.compute_slots:
            _, _, q = heapq.heappop(self._slot_heap)
            q._slot_waiting = False
            self._start(q, t)
        if dispatch:
            self._ht_enqueue(dispatch)
        self._cv.notify_all()

    def _sim_loop(self) -> None:
        with self._lock:
            while self._alive:
                self._process_due(perf_counter())
                if self._heap:
                    delay = self._heap[0][0] - perf_counter()
                    if delay > 0:
                        self._cv.wait(delay)
                else:
                    self._cv.wait(0.05)

    # --------------------------------------------------------- host tasks

    def _ht_enqueue(self, entries) -> None:
        with self._ht_lock:
            self._ht_queue.extend(entries)
            self._ht_cv.notify_all()

    def _hosttask_loop(self) -> None:
        while True:
            with self._ht_lock:
                while not self._ht_queue and self._alive:
                    self._ht_cv.wait(0.05)
                if not self._ht_queue:
                    if not self._alive:
                        return
                    continue
                cb, _ = self._ht_queue.popleft()
                self._ht_active += 1
            try:
                if self.clock_mode is ClockMode.REAL and self.hosttask_dispatch_cost > 0:
                    _spin(self.hosttask_dispatch_cost)
                try:
                    cb()
                except BaseException:  # noqa: BLE001 - callback faults land in futures
                    pass
            finally:
                with self._ht_lock:
                    self._ht_active -= 1
                self.counters.hosttask_dispatched += 1
