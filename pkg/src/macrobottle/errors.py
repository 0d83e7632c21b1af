"""Exception types shared across the package."""

from __future__ import annotations


class MacrobottleError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(MacrobottleError):
    """Operand shapes are incompatible with the requested operation."""


class TapeError(MacrobottleError):
    """Backward pass requested without a usable forward graph."""


class DataError(MacrobottleError):
    """Input data violates a contract (alignment, parsing, emptiness, layout)."""


class ParseError(DataError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        super().__init__(message)
        self.path = path
        self.line = line


class DegenerateDataError(DataError):
    """Data is degenerate for the requested statistic (e.g. all-equal input)."""


class NumericalError(MacrobottleError):
    """A numerical computation failed (NaN loss, undefined quantity)."""
