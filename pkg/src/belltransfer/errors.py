"""Exception hierarchy shared by every module."""


class BellTransferError(Exception):
    """Base class; the CLI maps any subclass to exit code 2."""


class DimensionMismatch(BellTransferError, ValueError):
    pass


class NotNormalized(BellTransferError, ValueError):
    pass


class DegenerateChannel(BellTransferError, ValueError):
    """A channel coefficient vanished (departure at or beyond pi/4)."""


class AssumptionViolated(BellTransferError, ValueError):
    """The printed operators assume the all-``a`` product is the least one."""


class InvalidIndex(BellTransferError, IndexError):
    pass


class DuplicateMapping(BellTransferError, ValueError):
    pass


class RatioOutOfRange(BellTransferError, ValueError):
    pass


class IndexCollision(BellTransferError, ValueError):
    pass


class InvariantViolation(BellTransferError, RuntimeError):
    """A constructed operator failed its own consistency check."""
