"""Exception types shared across the package."""


class MdspdeError(Exception):
    """Base class for package errors."""


class ConfigError(MdspdeError):
    """Malformed or inconsistent run configuration."""


class BasisMismatchError(MdspdeError):
    """A field was combined with an operator built on a different basis."""


class GridMismatchError(MdspdeError):
    """Two trajectories do not share the same time grid."""


class StepSizeError(MdspdeError):
    """Time step too large for the requested time-scale separation."""


class HypothesisError(MdspdeError):
    """The model violates a structural condition required by the operation."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
