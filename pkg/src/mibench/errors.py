"""Exception types shared across the package."""


class MibenchError(Exception):
    """Base class for all package errors."""


class ConfigError(MibenchError):
    """Invalid configuration: bad dimensions, unknown keys, out-of-range values."""


class ShapeError(MibenchError):
    """Array shapes incompatible with the requested operation."""


class NumericError(MibenchError):
    """Non-finite values or numerically impossible operations."""


class DomainError(MibenchError):
    """Arguments outside the mathematical domain of a formula."""
