"""Exception hierarchy shared by every trendcast module."""


class TrendcastError(Exception):
    """Base class for all package errors."""


class ArgumentError(TrendcastError, ValueError):
    """Caller supplied arguments that violate an operation's preconditions."""


class ParseError(TrendcastError, ValueError):
    """Input text could not be parsed.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GapError(ParseError):
    """Periods in an input file are not contiguous."""


class DomainError(TrendcastError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class SpecError(TrendcastError, ValueError):
    """A model specification is inconsistent."""


class NumericalError(TrendcastError, ArithmeticError):
    """A numerical routine broke down (non-positive variance, degenerate update)."""
