"""
Exception hierarchy for the engagement pipeline.

Every error carries the process exit code the CLI uses for it:
2 for bad input or usage, 3 for numeric failures.
"""

from __future__ import annotations


class EngageError(ValueError):
    """Base class for all pipeline errors."""

    exit_code: int = 1

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class InputError(EngageError):
    """Input data or arguments cannot be used."""

    exit_code = 2


class ParseError(InputError):
    """A row of an input file could not be parsed."""

    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(InputError):
    """A required column is missing from an input file."""

    def __init__(self, column: str) -> None:
        super().__init__(f"missing required column: {column}")
        self.column = column


class EmptyLogError(InputError):
    """An event log has no data rows."""


class SessionOrderError(InputError):
    """Events handed to the sessionizer are unsorted or mix users."""


class SplitError(InputError):
    """A dataset is too small for the requested split."""


class ShapeError(InputError):
    """Array shapes or feature widths do not agree."""


class ModelFormatError(InputError):
    """A model file is unreadable or malformed."""


class UnsupportedSchemaError(ModelFormatError):
    """A model file declares an unknown schema version or variant."""


class NumericError(EngageError):
    """A numeric computation produced an unusable value."""

    exit_code = 3


class NonFiniteGradientError(NumericError):
    """A gradient array contains NaN or infinity."""

    def __init__(self, array_name: str) -> None:
        super().__init__(f"non-finite gradient in parameter array '{array_name}'")
        self.array_name = array_name


class NonFiniteLossError(NumericError):
    """The training loss became NaN or infinite."""

    def __init__(self, epoch: int, batch: int) -> None:
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class DegenerateAUCError(NumericError):
    """AUC is undefined because only one class is present."""
