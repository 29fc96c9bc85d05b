"""Exception types shared across the package."""


class GrowthPatternsError(Exception):
    """Base class for all package errors."""


class DataError(GrowthPatternsError, ValueError):
    """Malformed input, violated precondition or inconsistent identifiers."""


class NumericError(GrowthPatternsError, ArithmeticError):
    """A factorization failed or a fit degenerated beyond repair."""
