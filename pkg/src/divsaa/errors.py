"""Exception hierarchy shared by the solver, the models and the CLI."""


class DivSaaError(Exception):
    """Base class for all library errors."""


class EmptySampleError(DivSaaError, ValueError):
    pass


class NumericOverflowError(DivSaaError, ArithmeticError):
    pass


class BracketUnavailableError(DivSaaError):
    pass


class UnboundedSupportError(DivSaaError, ValueError):
    pass


class InvalidPLInstance(DivSaaError, ValueError):
    def __init__(self, message, theta=None, z=None):
        super().__init__(message)
        self.theta = theta
        self.z = z


class HessianNotPositiveDefinite(DivSaaError, ArithmeticError):
    def __init__(self, message, hessian=None, min_eig=None):
        super().__init__(message)
        self.hessian = hessian
        self.min_eig = min_eig


class NonUniqueOptimum(DivSaaError):
    pass


class C5Violation(DivSaaError):
    pass


class InsufficientRowsError(DivSaaError, ValueError):
    pass


class ConfigError(DivSaaError, ValueError):
    pass
