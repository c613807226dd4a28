"""Exception types raised across the package."""


class RankfuseError(Exception):
    """Base class for all package errors."""


class InvalidInput(RankfuseError, ValueError):
    pass


class InvalidState(RankfuseError, RuntimeError):
    pass


class NumericalFailure(RankfuseError, ArithmeticError):
    pass


class FormatError(RankfuseError, ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
