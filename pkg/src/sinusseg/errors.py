"""Exception types shared across the package.

Categories map to CLI exit codes: ConfigError -> 3, everything else -> 1.
"""


class SinussegError(Exception):
    """Base class for all package errors."""


class FormatError(SinussegError):
    """Malformed input file (CSV header, PNG mode, ...)."""


class RowError(FormatError):
    """A single malformed row in an otherwise valid file; carries the line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class EmptyAnnotationError(FormatError):
    """An annotation file that yields zero usable polygon regions."""


class DegeneratePolygonError(SinussegError):
    """Polygon with fewer than 3 vertices."""


class ShapeError(SinussegError):
    """Mismatched array dimensions between compared inputs."""


class CountError(SinussegError):
    """Not enough records to satisfy requested split counts."""


class PairingError(SinussegError):
    """Prediction/ground-truth file sets do not pair up one-to-one."""


class ConfigError(SinussegError):
    """Invalid or inconsistent run configuration."""


class DataError(SinussegError):
    """A dataset precondition is not met (empty domain, missing images, ...)."""


class TrainingDivergedError(SinussegError):
    """A training loss became non-finite; a diagnostic checkpoint was written."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path
