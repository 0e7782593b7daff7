"""Exception types raised by shapeunfold."""


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class NumericError(ArithmeticError):
    """A numerical routine failed to reach its requested accuracy."""


class RepairFailure(RuntimeError):
    """No feasible point was found while repairing a dual solution."""
