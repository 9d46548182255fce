"""Exception hierarchy shared by every subsystem."""


class OSaaSError(Exception):
    """Base class for all errors raised by osaas_guard."""


# spectrum
class NonAlignedWidth(OSaaSError, ValueError):
    pass


class EmptyInput(OSaaSError, ValueError):
    pass


class NonPositiveWidth(OSaaSError, ValueError):
    pass


# simulator
class UnknownUser(OSaaSError, KeyError):
    pass


class OverlapOutsideWindow(OSaaSError, ValueError):
    pass


class ScenarioError(OSaaSError, ValueError):
    pass


# wire
class MalformedLine(OSaaSError, ValueError):
    pass


class UnknownRecordKind(MalformedLine):
    pass


class VersionMismatch(MalformedLine):
    pass


class Disconnected(OSaaSError, ConnectionError):
    pass


# detector
class ShapeMismatch(OSaaSError, ValueError):
    pass


class NonFiniteInput(OSaaSError, ValueError):
    pass


class EmptyDataset(OSaaSError, ValueError):
    pass


class DimensionMismatch(OSaaSError, ValueError):
    pass


class CheckpointError(OSaaSError, ValueError):
    pass


# policy / harness
class UnmitigableViolation(OSaaSError):
    pass


class InvalidSpec(OSaaSError, ValueError):
    pass


class NoPositiveScenarios(OSaaSError, UserWarning):
    pass
