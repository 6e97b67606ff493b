"""Event-to-future bridging: how device completions enter the task graph.

Three interchangeable strategies:

* ``POLLING``: register the event in the runtime's poll registry; the future
  completes when a scheduler poll observes the event done. Never blocks.
* ``HOSTTASK``: a device-runtime-owned thread completes the future after the
  event. Never blocks a worker, but hands control to foreign threads.
* ``FENCE``: wait for the event inline, then return an already-ready future.
  This is the blocking baseline the other two are measured against.

The mode is fixed at construction for a whole run, mirroring a build-time
switch rather than a per-call choice.
"""

from __future__ import annotations

import enum
import threading

from .device import DeviceEvent, DeviceQueue, VirtualDevice, make_dummy
from .errors import DeviceGoneError, OrderingError
from .runtime import EventCallback, FutureHandle, Runtime, make_promise, make_ready_future


class IntegrationMode(enum.Enum):
    POLLING = "polling"
    HOSTTASK = "hosttask"
    FENCE = "fence"


class Integration:
    """Bridges one device's events into one runtime's future graph."""

    def __init__(self, runtime: Runtime, device: VirtualDevice, mode: IntegrationMode):
        self.runtime = runtime
        self.device = device
        self.mode = mode
        self._lock = threading.Lock()
        self.bridged_events = 0
        # Keep one queue open for the pool's lifetime so the device runtime
        # cannot wind down while bridged events are still in flight (the
        # persistent-runtime workaround).
        self._held_queue = device.queue()
        if device.lazy_submit:
            # A lazy device starts ops only when something looks: make every
            # scheduler poll issue a flush so polled events can progress.
            runtime.registry.add_flush_hook(device.flush)

    def _count(self) -> None:
        with self._lock:
            self.bridged_events += 1

    def get_future(self, event: DeviceEvent) -> FutureHandle:
        if self.mode is IntegrationMode.POLLING:
            return self.get_future_polling(event)
        if self.mode is IntegrationMode.HOSTTASK:
            return self.get_future_hosttask(event)
        return self.get_future_fence(event)

    def get_future_polling(self, event: DeviceEvent) -> FutureHandle:
        """Non-blocking: the next poll after completion makes the future ready."""
        promise, fut = make_promise(self.runtime.pool)
        self.runtime.registry.add(EventCallback(
            event,
            lambda: promise.set_result(None),
            on_abandon=promise.set_error,
        ))
        self._count()
        return fut

    def get_future_hosttask(self, event: DeviceEvent) -> FutureHandle:
        """Non-blocking: a device-runtime thread completes the future."""
        promise, fut = make_promise(self.runtime.pool)
        try:
            self.device.register_host_task(
                event,
                lambda: promise.set_result(None),
                on_abandon=promise.set_error,
            )
        except DeviceGoneError as e:
            promise.set_error(e)
        self._count()
        return fut

    def get_future_fence(self, event: DeviceEvent) -> FutureHandle:
        """Blocking baseline: wait out the event, then hand back a ready future."""
        self.device.event_wait(event)
        self._count()
        return make_ready_future(None)

    def get_future_queue(self, queue: DeviceQueue) -> FutureHandle:
        """Future for "everything submitted to this queue so far is done".

        Implemented by submitting a dummy single-task op and bridging its
        event; in-order semantics make its completion dominate all prior ops.
        """
        if not queue.in_order:
            raise OrderingError("queue-level futures require an in-order queue")
        event = queue.submit(make_dummy())
        return self.get_future(event)
