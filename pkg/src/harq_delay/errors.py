"""Exception types raised across the package."""


class HarqDelayError(Exception):
    """Base class for all package errors."""


class QuadratureNotConverged(HarqDelayError):
    pass


class DimensionMismatch(HarqDelayError, ValueError):
    pass


class UnstableQueue(HarqDelayError):
    """The offered load leaves the M/G/1 queue without a finite mean wait."""

    def __init__(self, message, utilization=float("nan"), load=float("nan")):
        super().__init__(message)
        self.utilization = utilization
        self.load = load


class CellInfeasible(HarqDelayError):
    """No detection-index vector satisfies the outage/stability constraints for a fixed n."""


class InvalidConfig(HarqDelayError, ValueError):
    pass


class QueueExplosion(HarqDelayError):
    """Simulated queue grew past the diagnostic limit."""

    def __init__(self, message, time=float("nan"), queue_length=0):
        super().__init__(message)
        self.time = time
        self.queue_length = queue_length
