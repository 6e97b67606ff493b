"""Exception types shared across the runtime, device and executor layers."""


class TaskBridgeError(Exception):
    """Base class for all taskbridge errors."""


class PromiseStateError(TaskBridgeError):
    """A promise was completed more than once (programmer error)."""


class ShutdownError(TaskBridgeError):
    """Operation rejected or abandoned because the runtime is shutting down."""


class DeviceGoneError(TaskBridgeError):
    """The virtual device was destroyed while work still referenced it."""


class ModeError(TaskBridgeError):
    """Operation not valid in the device's current clock mode."""


class OrderingError(TaskBridgeError):
    """Queue-level future requested on a queue without in-order guarantees."""


class KindError(TaskBridgeError):
    """Kernel kind not registered with the aggregation executor."""


class StateError(TaskBridgeError):
    """Aggregation executor queried in a state that does not permit it."""


class PoolError(TaskBridgeError):
    """Buffer pool misuse, e.g. releasing a buffer that is not live."""
