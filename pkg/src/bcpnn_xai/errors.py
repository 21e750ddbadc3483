"""Exception hierarchy shared by every module."""


class BCPNNError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BCPNNError, ValueError):
    """Declared structure or parameters are invalid or inconsistent."""


class InvariantViolation(BCPNNError, RuntimeError):
    """An internal invariant failed; this indicates an engine bug."""


class UndefinedUsageError(BCPNNError, ArithmeticError):
    """Usage score denominator is zero."""


class SchemaError(BCPNNError, ValueError):
    """A dataset does not match the declared ontology."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])


class SizeCapError(BCPNNError, ValueError):
    """An exhaustive oracle was asked for an instance above its size cap."""
