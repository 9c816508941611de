"""Exception types shared across the package."""


class TermcovError(Exception):
    """Base class for all package errors."""


class ConfigError(TermcovError, ValueError):
    """Invalid parameter or configuration value."""


class DataError(TermcovError, ValueError):
    """Input data that is malformed, incomplete or inconsistent."""


class NumericalError(TermcovError, ArithmeticError):
    """A computation produced a degenerate or inconsistent result."""
