class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite or degenerate output."""
