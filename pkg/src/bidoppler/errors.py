"""Exception hierarchy shared by all modules."""


class BiDopplerError(Exception):
    """Base class for every error raised by the package."""

    #: short machine-readable tag written to result files
    reason = "error"


class DegenerateGeometryError(BiDopplerError, ValueError):
    reason = "degenerate_geometry"


class IllConditionedError(BiDopplerError, ValueError):
    reason = "ill_conditioned"


class InsufficientPathsError(BiDopplerError):
    reason = "insufficient_paths"


class InsufficientFramesError(BiDopplerError):
    reason = "insufficient_frames"


class MissingReferenceError(BiDopplerError):
    reason = "missing_los"


class InconsistentMeasurementError(BiDopplerError, ValueError):
    reason = "inconsistent_measurement"


class ConfigurationError(BiDopplerError, ValueError):
    reason = "configuration"


class UnsupportedTimingError(BiDopplerError, ValueError):
    reason = "unsupported_timing"


class UnsupportedLengthError(BiDopplerError, ValueError):
    reason = "unsupported_length"


class InfiniteVarianceError(BiDopplerError, ValueError):
    reason = "infinite_variance"


class TraceError(BiDopplerError, ValueError):
    """Malformed or out-of-order trace file."""

    reason = "trace"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TraceOrderError(TraceError):
    reason = "trace_order"
