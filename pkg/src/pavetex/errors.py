"""Exception types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, ComputationError -> 3.
"""


class PavetexError(Exception):
    """Base class for all package errors."""


class DataError(PavetexError, ValueError):
    """Input data is missing, unreadable, or violates a precondition."""


class ComputationError(PavetexError, ArithmeticError):
    """A computation has no defined result for the given input."""


class StageError(PavetexError):
    """An error raised inside one pipeline stage, annotated with the stage name."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
