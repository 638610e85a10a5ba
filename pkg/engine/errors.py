"""Exception hierarchy shared by the engines, adapters and the CLI."""
from typing import Optional


class DependenceError(Exception):
    """Base class for every error raised by the engines."""

    kind = "dependence-error"


class InputValidationError(DependenceError, ValueError):
    """Malformed input: non-finite entries, ragged files, bad selectors."""

    kind = "input-validation"

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DomainError(DependenceError, ValueError):
    """Arguments outside the mathematical domain of an operation."""

    kind = "domain"


class DegenerateSampleError(DomainError):
    """A quantity is undefined because the sample is constant."""

    kind = "degenerate-sample"


class SeriesConvergenceError(DependenceError, ArithmeticError):
    """A series or continued fraction did not converge within its term cap."""

    kind = "series-convergence"

    def __init__(self, message: str, partial_sum: float, terms: int, last_term: float):
        super().__init__(
            f"{message} (partial_sum={partial_sum!r}, terms={terms}, last_term={last_term!r})"
        )
        self.partial_sum = partial_sum
        self.terms = terms
        self.last_term = last_term
