"""Exception types raised across the package."""


class PerispecError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(PerispecError, ValueError):
    pass


class NotPositiveDefiniteError(PerispecError):
    """A covariance or spectrum that should be nonnegative definite is not."""


class NumericalBreakdownError(PerispecError, ArithmeticError):
    pass


class ConvergenceError(PerispecError):
    """An iterative solver stopped before reaching its tolerance.

    The solver report is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class EmbeddingFailureError(PerispecError):
    pass


class DenseCapExceededError(PerispecError):
    pass
