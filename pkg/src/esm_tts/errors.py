"""Exception types shared across the package."""

from __future__ import annotations


class ShapeMismatch(ValueError):
    pass


class MaskLengthMismatch(ShapeMismatch):
    pass


class NonFiniteActivation(FloatingPointError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class DivergedLoss(RuntimeError):
    pass


class ConsistencyFailure(AssertionError):
    pass


class InvalidLabel(ValueError):
    pass


class UnknownToken(KeyError):
    pass


class NoEnglishSpan(UserWarning):
    """Issued when a control operation finds nothing to act on."""


class ParseError(ValueError):
    """Base for annotated-utterance parse failures.

    ``line`` and ``column`` are 1-based; ``column`` points at the offending field.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


class UnknownSymbol(ParseError):
    pass


class MalformedSpan(ParseError):
    pass


class EmptyLine(ParseError):
    pass
