"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit 2,
numerical failures exit 3, I/O errors (plain OSError) exit 4.
"""


class BbdLabError(Exception):
    """Base class for package errors."""


class ConfigurationError(BbdLabError, ValueError):
    """Bad shapes, unknown tags, or invalid experiment configuration."""


class DataDomainError(ConfigurationError):
    """Target data outside the domain a loss requires (e.g. not a probability vector)."""


class NumericError(BbdLabError, ArithmeticError):
    """Non-finite values or a numerical procedure that failed to converge."""
