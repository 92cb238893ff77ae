"""Exception hierarchy for the fufs package."""


class FufsError(Exception):
    """Base class for all package errors."""


class DomainError(FufsError, ValueError):
    """An argument is outside the mathematical domain of the operation."""


class DegenerateInputError(DomainError):
    """Parameters for which the statistic is undefined (e.g. a single allele)."""


class ConvergenceError(FufsError, ArithmeticError):
    """An iterative scheme failed to converge within its budget."""


class SaturationError(FufsError, ArithmeticError):
    """A tail probability rounded to 0 or 1 at working precision.

    ``sign`` is +1 when the statistic diverges to +inf, -1 for -inf.
    """

    def __init__(self, message: str, sign: int):
        super().__init__(message)
        self.sign = sign


class ResourceError(FufsError, MemoryError):
    """A requested computation exceeds the configured resource budget."""


class AlignmentFormatError(FufsError, ValueError):
    """Malformed FASTA input or inconsistent alignment."""
