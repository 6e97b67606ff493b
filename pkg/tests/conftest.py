"""Shared fixtures: runtime/device lifecycles and a full bridged stack."""

import contextlib
from dataclasses import dataclass
from typing import List, Optional

import pytest

from taskbridge import (
    AggregationExecutor,
    BufferPool,
    ClockMode,
    ExecutorPool,
    Integration,
    IntegrationMode,
    LatencyModel,
    Runtime,
    VirtualClockPump,
    VirtualDevice,
)
from taskbridge.miniapp import KERNEL_KINDS, kernel_transform

# Lines emitted by the acceptance tests; shown after the run regardless of
# pytest's output capturing.
ACCEPTANCE_LINES: List[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class FakeEvent:
    """Minimal completion token for registry-only tests."""

    __slots__ = ("done",)

    def __init__(self, done: bool = False):
        self.done = done

    def is_complete(self) -> bool:
        return self.done


@dataclass
class Stack:
    """One fully wired bench rig: runtime, device, bridge, executors."""

    runtime: Runtime
    device: VirtualDevice
    integration: Integration
    executors: ExecutorPool
    buffers: BufferPool
    aggs: List[AggregationExecutor]
    pump: Optional[VirtualClockPump]

    def drive(self, fut):
        """Resolve a future under the stack's clock discipline."""
        if self.pump is not None:
            return self.pump.drive(fut)
        return fut.result(timeout=60.0)


def build_stack(workers=2, mode=IntegrationMode.POLLING, clock=ClockMode.VIRTUAL,
                executors=1, max_agg=4, latency=None, compute_slots=16,
                inject_barriers=True, barrier_elision=False, lazy_submit=False,
                register_kinds=True, hosttask_dispatch_cost=0.0) -> Stack:
    runtime = Runtime(workers, seed=7)
    device = VirtualDevice(
        compute_slots=compute_slots,
        clock_mode=clock,
        latency=latency or LatencyModel(),
        barrier_elision=barrier_elision,
        lazy_submit=lazy_submit,
        hosttask_dispatch_cost=hosttask_dispatch_cost,
    )
    integration = Integration(runtime, device, mode)
    pool = ExecutorPool(integration, executors)
    buffers = BufferPool(device)
    aggs = [AggregationExecutor(ex, max_agg, buffers,
                                inject_barriers=inject_barriers)
            for ex in pool.executors]
    if register_kinds:
        for agg in aggs:
            for kind in range(KERNEL_KINDS):
                agg.register_kind(kind, kernel_transform(kind))
    pump = None
    if clock is ClockMode.VIRTUAL:
        pump = VirtualClockPump(runtime, device, watchdog_seconds=60.0)
    return Stack(runtime, device, integration, pool, buffers, aggs, pump)


def teardown_stack(stack: Stack) -> None:
    stack.runtime.shutdown()
    stack.device.destroy()


@pytest.fixture
def stack_factory():
    stacks: List[Stack] = []

    def make(**kw) -> Stack:
        s = build_stack(**kw)
        stacks.append(s)
        return s

    yield make
    for s in stacks:
        with contextlib.suppress(Exception):
            teardown_stack(s)


@pytest.fixture
def runtime_factory():
    runtimes: List[Runtime] = []

    def make(workers=2, **kw) -> Runtime:
        rt = Runtime(workers, **kw)
        runtimes.append(rt)
        return rt

    yield make
    for rt in runtimes:
        with contextlib.suppress(Exception):
            rt.shutdown()


@pytest.fixture
def device_factory():
    devices: List[VirtualDevice] = []

    def make(**kw) -> VirtualDevice:
        kw.setdefault("clock_mode", ClockMode.VIRTUAL)
        d = VirtualDevice(**kw)
        devices.append(d)
        return d

    yield make
    for d in devices:
        with contextlib.suppress(Exception):
            d.destroy()
