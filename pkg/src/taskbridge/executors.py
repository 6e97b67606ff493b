"""Executors: queue wrappers, a round-robin pool, and kernel aggregation.

A DeviceExecutor owns one in-order queue and offers one-way (fire and
forget) and two-way (future-returning) submission. The AggregationExecutor
sits on top of one DeviceExecutor and fuses compatible kernel requests,
launching a batch when it reaches ``max_slots`` members or when the
underlying queue goes idle, whichever happens first.
"""

from __future__ import annotations

import logging
import threading
from typing import Callable, Dict, List, Optional

import numpy as np

from .bridge import Integration
from .device import (
    DeviceBuffer,
    DeviceOp,
    make_barrier,
    make_d2h,
    make_h2d,
    make_kernel,
)
from .errors import DeviceGoneError, KindError, PoolError, StateError
from .runtime import FutureHandle, FutureStatus, make_promise

log = logging.getLogger(__name__)


class DeviceExecutor:
    """Wraps one exclusively-owned in-order device queue."""

    def __init__(self, integration: Integration, executor_id: int):
        self.integration = integration
        self.id = executor_id
        self.queue = integration.device.queue()

    def one_way(self, op: DeviceOp) -> None:
        """Fire-and-forget submit; ordering still comes from the queue."""
        try:
            self.queue.submit(op)
        except DeviceGoneError:
            log.warning("one-way submit dropped: device gone (executor %d)", self.id)

    def two_way(self, op: DeviceOp) -> FutureHandle:
        """Submit and bridge the op's event via the active integration mode."""
        try:
            event = self.queue.submit(op)
        except DeviceGoneError as e:
            promise, fut = make_promise(self.integration.runtime.pool)
            promise.set_error(e)
            return fut
        return self.integration.get_future(event)

    def idleness_future(self) -> FutureHandle:
        """Ready once everything currently on the queue has completed."""
        return self.integration.get_future_queue(self.queue)

    def busy(self) -> bool:
        return self.queue.incomplete_count() > 0


class ExecutorPool:
    """Fixed set of device executors handed out round-robin."""

    def __init__(self, integration: Integration, size: int):
        if size < 1:
            raise ValueError("executor pool size must be >= 1")
        self.executors = [DeviceExecutor(integration, i) for i in range(size)]
        self._lock = threading.Lock()
        self._next = 0

    def __len__(self) -> int:
        return len(self.executors)

    def acquire(self) -> DeviceExecutor:
        with self._lock:
            ex = self.executors[self._next]
            self._next = (self._next + 1) % len(self.executors)
            return ex


class BufferPool:
    """Recycles device buffers by exact byte size.

    Workload buffer sizes repeat heavily, so exact-size buckets give maximal
    reuse without size-class bookkeeping.
    """

    def __init__(self, device):
        self.device = device
        self._lock = threading.Lock()
        self._free: Dict[int, List[DeviceBuffer]] = {}
        self._live: set = set()
        self.created = 0
        self.reused = 0
        self.live_high_water = 0

    def alloc(self, size_bytes: int) -> DeviceBuffer:
        with self._lock:
            bucket = self._free.get(size_bytes)
            if bucket:
                buf = bucket.pop()
                self.reused += 1
            else:
                buf = self.device.alloc_buffer(size_bytes)
                self.created += 1
            self._live.add(buf.id)
            if len(self._live) > self.live_high_water:
                self.live_high_water = len(self._live)
            return buf

    def release(self, buf: DeviceBuffer) -> None:
        with self._lock:
            if buf.id not in self._live:
                raise PoolError(f"buffer {buf.id} is not live (double release?)")
            self._live.remove(buf.id)
            self._free.setdefault(buf.size_bytes, []).append(buf)


class _AggRequest:
    __slots__ = ("src", "dst", "work_items", "promise")

    def __init__(self, src, dst, work_items, promise):
        self.src = src
        self.dst = dst
        self.work_items = work_items
        self.promise = promise


class AggregationBatch:
    """One in-flight fusion group for a single kernel kind."""

    __slots__ = ("kind", "members", "launched", "reason", "idleness_future")

    def __init__(self, kind):
        self.kind = kind
        self.members: List[_AggRequest] = []
        self.launched = False
        self.reason: Optional[str] = None
        self.idleness_future: Optional[FutureHandle] = None


class AggregationExecutor:
    """Fuses same-kind kernel requests into single larger launches.

    Each registered kind carries an elementwise transform; because the
    transform is applied elementwise to the fused staging buffer, a fused
    launch is bit-identical to the separate launches it replaces.
    """

    def __init__(self, executor: DeviceExecutor, max_slots: int,
                 buffers: BufferPool, inject_barriers: bool = True):
        if max_slots < 1:
            raise ValueError("max_slots must be >= 1")
        self.executor = executor
        self.max_slots = max_slots
        self.buffers = buffers
        self.inject_barriers = inject_barriers
        self._lock = threading.Lock()
        self._kinds: Dict[object, Callable[[np.ndarray], None]] = {}
        self._open: Dict[object, AggregationBatch] = {}
        self.scheduled = 0
        self.launches = 0
        self.batch_sizes: List[int] = []
        self.reasons = {"full": 0, "idle": 0}

    def register_kind(self, kind, transform: Callable[[np.ndarray], None]) -> None:
        self._kinds[kind] = transform

    def schedule(self, kind, src: np.ndarray, dst: np.ndarray) -> FutureHandle:
        """Queue one kernel request; the future completes after its batch runs."""
        if kind not in self._kinds:
            raise KindError(f"kernel kind {kind!r} is not registered")
        promise, fut = make_promise(self.executor.integration.runtime.pool)
        req = _AggRequest(src, dst, int(src.size), promise)
        if self.max_slots == 1:
            # Degenerate case: nothing to fuse, launch immediately. The cap
            # was reached by the single member, so the reason is "full".
            with self._lock:
                self.scheduled += 1
            batch = AggregationBatch(kind)
            batch.members.append(req)
            batch.launched = True
            self._launch(batch, "full")
            return fut
        opened: Optional[AggregationBatch] = None
        to_launch: Optional[AggregationBatch] = None
        with self._lock:
            self.scheduled += 1
            batch = self._open.get(kind)
            if batch is None:
                batch = AggregationBatch(kind)
                self._open[kind] = batch
                opened = batch
            batch.members.append(req)
            if len(batch.members) == self.max_slots:
                del self._open[kind]
                batch.launched = True
                to_launch = batch
        if opened is not None:
            # One idleness probe per batch: when the underlying queue drains
            # before the batch fills, launch whatever has accumulated.
            probe = self.executor.idleness_future()
            opened.idleness_future = probe
            pool = self.executor.integration.runtime.pool

            def idle_fire(b=opened, f=probe):
                if f.state.status is FutureStatus.FAULTED:
                    self._abandon(b, f.state.error)
                else:
                    self._launch_if_open(b)

            probe.state.add_continuation(
                lambda: pool.submit_continuation(idle_fire))
        if to_launch is not None:
            self._launch(to_launch, "full")
        return fut

    def first_slot_future(self, kind) -> FutureHandle:
        """The idleness-detection future of the open batch for ``kind``."""
        with self._lock:
            batch = self._open.get(kind)
            if batch is None or batch.idleness_future is None:
                raise StateError(f"no open batch for kind {kind!r}")
            return batch.idleness_future

    def open_batch_size(self, kind) -> int:
        with self._lock:
            batch = self._open.get(kind)
            return len(batch.members) if batch else 0

    # ---------------------------------------------------------------- launch

    def _launch_if_open(self, batch: AggregationBatch) -> None:
        with self._lock:
            if batch.launched:
                return  # the full trigger won the race
            if self._open.get(batch.kind) is batch:
                del self._open[batch.kind]
            batch.launched = True
        self._launch(batch, "idle")

    def _abandon(self, batch: AggregationBatch, err: BaseException) -> None:
        with self._lock:
            if batch.launched:
                return
            if self._open.get(batch.kind) is batch:
                del self._open[batch.kind]
            batch.launched = True
        for m in batch.members:
            m.promise.set_error(err)

    def _launch(self, batch: AggregationBatch, reason: str) -> None:
        batch.reason = reason
        transform = self._kinds[batch.kind]
        members = batch.members
        total_items = sum(m.work_items for m in members)
        nbytes = total_items * 8
        staging = self.buffers.alloc(nbytes)
        device_view = staging.f64()[: total_items]

        # Marshal member payloads into one contiguous host region up front;
        # the fused H2D then moves it to the device in a single op.
        upload = np.empty(total_items, dtype=np.float64)
        offsets = []
        pos = 0
        for m in members:
            offsets.append(pos)
            upload[pos:pos + m.work_items] = m.src
            pos += m.work_items
        landing = np.empty(total_items, dtype=np.float64)

        ex = self.executor
        ex.one_way(make_h2d(nbytes, compute=lambda: device_view.__setitem__(
            slice(None), upload)))
        ex.one_way(make_kernel(total_items, compute=lambda: transform(device_view)))
        if self.inject_barriers:
            ex.one_way(make_barrier())
        done = ex.two_way(make_d2h(nbytes, compute=lambda: landing.__setitem__(
            slice(None), device_view)))

        def finish():
            if done.state.status is FutureStatus.FAULTED:
                self.buffers.release(staging)
                err = done.state.error
                for m in members:
                    m.promise.set_error(err)
                return
            for m, off in zip(members, offsets):
                m.dst[:] = landing[off:off + m.work_items]
            self.buffers.release(staging)
            with self._lock:
                self.launches += 1
                self.batch_sizes.append(len(members))
                self.reasons[reason] += 1
            for m in members:
                m.promise.set_result(None)

        pool = ex.integration.runtime.pool
        done.state.add_continuation(lambda: pool.submit_continuation(finish))
