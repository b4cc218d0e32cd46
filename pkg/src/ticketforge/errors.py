"""Exception types shared across the package.

The CLI maps each class to a distinct exit code.
"""


class TicketForgeError(Exception):
    pass


class ConfigError(TicketForgeError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(TicketForgeError):
    """Missing, malformed or insufficient input data (exit code 3)."""


class NumericalError(TicketForgeError):
    """Non-finite values during training or gradient computation (exit code 4)."""


class TicketFormatError(DataError):
    """A ticket file failed validation on load."""
