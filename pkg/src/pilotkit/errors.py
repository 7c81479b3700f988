"""Exception hierarchy shared by all pilotkit modules."""


class PilotkitError(Exception):
    """Base class for every error raised by pilotkit."""


class IllegalTransition(PilotkitError):
    pass


class ClockRegression(PilotkitError):
    pass


class CapacityExceeded(PilotkitError):
    pass


class UnknownBackend(PilotkitError):
    pass


class PilotNotActive(PilotkitError):
    pass


class SlotOccupied(PilotkitError):
    pass


class KernelFailure(PilotkitError):
    def __init__(self, message, exit_code=1):
        super().__init__(message)
        self.exit_code = exit_code


class AlreadyTerminal(PilotkitError):
    pass


class CycleDetected(PilotkitError):
    pass


class UnknownDataUnit(PilotkitError):
    pass


class UnknownEntity(PilotkitError):
    pass


class QueueFull(PilotkitError):
    pass


class WaitTimeout(PilotkitError):
    """Raised by ``wait``; ``partial`` maps ids that did finish to their state."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


class SourceMissing(PilotkitError):
    pass


class StoreFull(PilotkitError):
    pass


class DataUnitFailed(PilotkitError):
    pass


class KLargerThanDistinctPoints(PilotkitError):
    pass


class MalformedLog(PilotkitError):
    pass


class SingularDesign(PilotkitError):
    pass


class InvalidDescription(PilotkitError):
    """A description, workload file or manifest failed validation."""


class BackpressureOverflow(PilotkitError):
    """The stream broker dropped messages because its bound was reached."""

    def __init__(self, message: str, dropped: int = 0):
        super().__init__(message)
        self.dropped = dropped
