"""taskbridge: a worker-pool task runtime bridged to a simulated accelerator.

The package compares three ways of turning device-event completions into
runtime futures (scheduler event polling, device-runtime host-task
callbacks, and a blocking fence baseline), layers a kernel-aggregation
executor on top, and benchmarks them with a synthetic stencil mini-app.
"""

from .bridge import Integration, IntegrationMode
from .device import (
    ClockMode,
    DeviceBuffer,
    DeviceEvent,
    DeviceOp,
    DeviceQueue,
    EventStatus,
    LatencyModel,
    OpKind,
    VirtualDevice,
    make_barrier,
    make_d2h,
    make_dummy,
    make_h2d,
    make_kernel,
)
from .errors import (
    DeviceGoneError,
    KindError,
    ModeError,
    OrderingError,
    PoolError,
    PromiseStateError,
    ShutdownError,
    StateError,
    TaskBridgeError,
)
from .executors import (
    AggregationBatch,
    AggregationExecutor,
    BufferPool,
    DeviceExecutor,
    ExecutorPool,
)
from .miniapp import (
    Scenario,
    ScenarioConfig,
    StepMetrics,
    build_scenario,
    kernel_transform,
    run_scenario,
    submit_step,
)
from .pump import VirtualClockPump
from .runtime import (
    EventCallback,
    FutureHandle,
    FutureStatus,
    PollRegistry,
    PromiseHandle,
    Runtime,
    Task,
    WorkerPool,
    future_then,
    make_promise,
    make_ready_future,
    when_all,
)

__version__ = "0.1.0"

__all__ = [
    "Integration",
    "IntegrationMode",
    "ClockMode",
    "DeviceBuffer",
    "DeviceEvent",
    "DeviceOp",
    "DeviceQueue",
    "EventStatus",
    "LatencyModel",
    "OpKind",
    "VirtualDevice",
    "make_barrier",
    "make_d2h",
    "make_dummy",
    "make_h2d",
    "make_kernel",
    "TaskBridgeError",
    "PromiseStateError",
    "ShutdownError",
    "DeviceGoneError",
    "ModeError",
    "OrderingError",
    "KindError",
    "StateError",
    "PoolError",
    "AggregationBatch",
    "AggregationExecutor",
    "BufferPool",
    "DeviceExecutor",
    "ExecutorPool",
    "Scenario",
    "ScenarioConfig",
    "StepMetrics",
    "build_scenario",
    "kernel_transform",
    "run_scenario",
    "submit_step",
    "VirtualClockPump",
    "EventCallback",
    "FutureHandle",
    "FutureStatus",
    "PollRegistry",
    "PromiseHandle",
    "Runtime",
    "Task",
    "WorkerPool",
    "future_then",
    "make_promise",
    "make_ready_future",
    "when_all",
    "__version__",
]
