"""
Exception and warning types of the edge-state lab.

Scientific failures derive from ``EdgeLabError`` and make the command line
exit with status 1; ``UsageError`` and its subclass ``ConfigError`` exit
with status 2.
"""


class EdgeLabError(Exception):
    """Base class for every error raised by the lab."""


class RangeError(EdgeLabError):
    """An argument lies outside the supported range."""


class PrecisionError(EdgeLabError):
    """Cancellation destroyed all significant digits of a result."""


class ResolutionError(EdgeLabError):
    """A grid or bracket is too coarse to resolve the quantity asked for."""


class AccuracyError(EdgeLabError):
    """Two discretizations disagree by more than the accepted tolerance."""

    def __init__(self, message: str, suggested_num_points: int = 0):
        super().__init__(message)
        self.suggested_num_points = suggested_num_points


class CoverageError(EdgeLabError):
    """Branch data do not cover the κ range a computation needs."""

    def __init__(self, message: str, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class DomainError(EdgeLabError):
    """Parameters violate the domain of a formula (e.g. B <= 0)."""


class EmptyWindowError(EdgeLabError):
    """No branch takes values inside the requested spectral window."""


class EmptyFilterError(EdgeLabError):
    """The energy filter removed (almost) the whole state."""


class StabilityError(EdgeLabError):
    """Time stepping lost norm faster than the solver tolerance allows."""

    def __init__(self, message: str, suggested_dt: float = 0.0):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class UsageError(EdgeLabError):
    """Invalid command-line input."""


class ConfigError(UsageError):
    """Malformed or rejected run configuration."""


class AccuracyWarning(UserWarning):
    """A result is returned but its accuracy is degraded."""
