"""Exception hierarchy shared across the package."""


class ExtremeDepError(Exception):
    """Base class for all package errors."""


class ValidationError(ExtremeDepError, ValueError):
    """Invalid input values or parameters."""


class ConfigError(ValidationError):
    """Invalid command-line or config-file settings."""


class DataError(ExtremeDepError):
    """Input data could not be read or is unusable."""


class EstimationError(ExtremeDepError):
    """A fitting procedure could not produce an estimate."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class TransformError(ExtremeDepError):
    """A probability integral transform hit the boundary of (0, 1)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class NumericError(ExtremeDepError):
    """A numerical routine failed to reach the requested accuracy."""


class QuadratureError(NumericError):
    def __init__(self, message, estimate=float("nan"), error=float("inf")):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class UnsupportedError(ExtremeDepError, NotImplementedError):
    """Requested operation is not available for this model or dimension."""


class DomainError(ValidationError):
    """A target value lies outside the range a function can attain."""

    def __init__(self, message, lower=None, upper=None):
        super().__init__(message)
        self.lower = lower
        self.upper = upper
