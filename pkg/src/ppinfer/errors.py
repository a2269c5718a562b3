"""Exception hierarchy.

Validation problems (bad inputs, out-of-range parameters, malformed files)
raise :class:`DomainError`; failures of a numerical routine on valid inputs
raise :class:`NumericalError`. The CLI maps these to exit codes 1 and 2.
"""


class PPIError(Exception):
    """Base class for all package errors."""


class DomainError(PPIError, ValueError):
    """An input violates a precondition."""


class DataParseError(DomainError):
    """A data file could not be parsed.

    Attributes:
        row: 1-based data row (header excluded), or None.
        column: column name, or None.
    """

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column '{column}'")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(PPIError, ArithmeticError):
    """A numerical routine failed on otherwise valid input."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap.

    Attributes:
        grad_norm: gradient norm at the final iterate.
        iterate: the final iterate.
    """

    def __init__(self, message, grad_norm, iterate=None):
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
        self.grad_norm = grad_norm
        self.iterate = iterate
