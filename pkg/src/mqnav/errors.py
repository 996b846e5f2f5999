"""Exception types shared across the package.

Each class carries the CLI exit code it maps to.
"""


class MqnavError(Exception):
    exit_code = 1


class ValidationError(MqnavError, ValueError):
    """Bad input: shapes, ranges, malformed files, schedule problems."""

    exit_code = 2


class StreamGapError(ValidationError):
    """Two consecutive IMU samples are too far apart (or out of order)."""

    def __init__(self, t_prev, t_next, message=None):
        self.t_prev = t_prev
        self.t_next = t_next
        super().__init__(message or f"IMU gap between t={t_prev!r} and t={t_next!r}")


class StreamOrderError(ValidationError):
    """Timestamps are not strictly increasing."""


class ParseError(ValidationError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class UpdateRejected(MqnavError):
    """Innovation covariance could not be inverted; the belief is left untouched."""


class DivergenceError(MqnavError, RuntimeError):
    exit_code = 3


class ArtifactIOError(MqnavError, OSError):
    exit_code = 4
