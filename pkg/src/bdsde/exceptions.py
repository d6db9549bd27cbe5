"""Exception hierarchy.

Every error raised on purpose by the library derives from ``BDSDEError`` and
carries a short ``category`` string that the command line maps to an exit code.
"""


class BDSDEError(Exception):
    category = "error"


class ConfigurationError(BDSDEError, ValueError):
    """Invalid user input: bad sizes, unknown keys, out-of-range constants."""

    category = "config-error"


class PreconditionError(BDSDEError, ValueError):
    category = "config-error"


class AllocationError(BDSDEError, MemoryError):
    category = "numerical-error"


class NumericalError(BDSDEError, ArithmeticError):
    category = "numerical-error"


class EvaluationError(NumericalError):
    """A user callable returned a non-finite value.

    ``path`` and ``step`` locate the first offending entry when known.
    """

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class RegressionError(NumericalError):
    def __init__(self, message, step=None, condition_number=None):
        super().__init__(message)
        self.step = step
        self.condition_number = condition_number


class ConvergenceError(NumericalError):
    def __init__(self, message, step=None, residual=None):
        super().__init__(message)
        self.step = step
        self.residual = residual


class BudgetExceededError(NumericalError):
    pass
