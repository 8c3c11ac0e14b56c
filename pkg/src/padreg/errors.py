"""Exception types shared across the package."""


class PadregError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(PadregError, ValueError):
    """Operands have incompatible grid dimensions."""


class DimensionTooSmallError(PadregError, ValueError):
    """Grid is too small for the requested operation."""


class DegenerateForceError(PadregError, ValueError):
    """Force pair is invalid for the requested differential variant."""


class ConfigError(PadregError, ValueError):
    """Configuration value is out of range or malformed."""


class SolverDivergedError(PadregError, RuntimeError):
    """The objective became non-finite; carries the loss trace for diagnosis."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)
