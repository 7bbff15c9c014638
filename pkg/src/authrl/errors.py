"""Exception types raised across the package."""


class AuthRLError(Exception):
    """Base class for all package errors."""


class ConfigError(AuthRLError, ValueError):
    """Invalid or incomplete configuration."""


class OutOfRangeError(AuthRLError, IndexError):
    """A time step or index outside its valid range."""


class InvalidPolicyError(AuthRLError, ValueError):
    """A policy is missing the model handle its variant requires."""


class PreconditionError(AuthRLError, ValueError):
    """Input data violates an ordering or grouping precondition."""


class AmbiguityError(PreconditionError):
    """Two records cannot be ordered (e.g. equal timestamps in one chain)."""


class SchemaError(AuthRLError, ValueError):
    """A record is missing a field or a field has the wrong type."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class ParseError(AuthRLError, ValueError):
    """A dataset line could not be decoded."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class DataError(AuthRLError, ValueError):
    """Logged data that cannot be used (e.g. zero propensities)."""


class DimensionError(AuthRLError, ValueError):
    """Array shapes inconsistent with a network spec."""


class NumericError(AuthRLError, FloatingPointError):
    """Non-finite values where finite ones are required."""


class DegenerateInputError(AuthRLError, ValueError):
    """Input without enough spread for the requested analysis."""
