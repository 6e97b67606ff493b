"""Virtual-clock pump: drives a future to completion in Virtual mode.

In Virtual mode nothing completes until someone advances the device clock.
The pump alternates between polling the event registry (so completions it
just produced turn into fired callbacks) and advancing the clock to the next
pending completion, but it only advances when the host side is quiescent:

* no pool activity able to progress: a slice executing on a worker that is
  not parked inside a fence wait, or a queued slice with a free worker left
  to take it (a backlog behind all-blocked workers cannot start until the
  clock moves, so it does not hold the clock back),
* no host-task callbacks queued or running,
* no fence waiter whose event has already completed but who has not yet
  resumed.

Advancing only at quiescence makes every burst of host work happen at one
virtual instant, which is what makes virtual-mode timings reproducible.
"""

from __future__ import annotations

import time
from time import perf_counter

from .device import ClockMode, VirtualDevice
from .errors import ModeError
from .runtime import FutureHandle, Runtime


class VirtualClockPump:
    """Advances a virtual device's clock whenever the host side is idle."""

    def __init__(self, runtime: Runtime, device: VirtualDevice,
                 watchdog_seconds: float = 120.0):
        if device.clock_mode is not ClockMode.VIRTUAL:
            raise ModeError("pump requires a device in ClockMode.VIRTUAL")
        self.runtime = runtime
        self.device = device
        self.watchdog_seconds = watchdog_seconds

    def drive(self, fut: FutureHandle):
        """Run until fut completes; returns its value (or raises its error)."""
        registry = self.runtime.registry
        pool = self.runtime.pool
        device = self.device
        deadline = perf_counter() + self.watchdog_seconds
        stalled = 0
        while not fut.is_ready():
            if perf_counter() > deadline:
                raise TimeoutError(
                    "pump watchdog expired: "
                    f"runnable={pool.runnable_activity()} "
                    f"progressable={pool.progressable_activity()} "
                    f"registry_pending={registry.pending_count()} "
                    f"hosttask_backlog={device.hosttask_backlog()} "
                    f"device_pending={device.has_pending()}")
            if registry.poll():
                stalled = 0
                continue
            if not device.safe_to_advance(pool.progressable_activity):
                # Workers or host-task threads are mid-flight; let them run.
                time.sleep(2e-6)
                stalled = 0
                continue
            if device.advance_to_next():
                stalled = 0
                continue
            # Quiescent with nothing left to advance. Either a thread is a
            # few instructions from showing up in the gauges, or the graph
            # is genuinely stuck; give it a moment before declaring that.
            stalled += 1
            if stalled > 5000:
                raise RuntimeError(
                    "virtual clock pump stuck: future not ready, host side "
                    f"quiescent, no pending device completions "
                    f"(registry_pending={registry.pending_count()})")
            time.sleep(10e-6)
        return fut.value()
