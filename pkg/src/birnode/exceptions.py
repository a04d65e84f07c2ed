"""Exception hierarchy shared by every module in the package."""


class BirnodeError(Exception):
    """Base class for all package errors."""


class DimensionError(BirnodeError, ValueError):
    """Operand shapes do not conform for an operation."""


class ContractError(BirnodeError, ValueError):
    """A precondition on arguments was violated."""


class TimeOrderError(BirnodeError, ValueError):
    """Integration interval or timestamps run backwards."""


class NormalizationError(BirnodeError, ValueError):
    """A timestamp falls outside the normalized interval [0, 1]."""


class NumericalError(BirnodeError, ArithmeticError):
    """A non-finite value appeared during computation."""


class NonConvergenceError(NumericalError):
    """An adaptive solve ran out of its step budget.

    ``interval`` carries the ``(t0, t1)`` pair that failed.
    """

    def __init__(self, message, interval=None):
        super().__init__(message)
        self.interval = interval


class DivergenceError(NumericalError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DataValidationError(BirnodeError, ValueError):
    """A dataset record violates an invariant; ``field`` names the culprit."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ParseError(BirnodeError, ValueError):
    """A dataset line could not be parsed; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SplitError(BirnodeError, ValueError):
    """A split cannot be formed from the given data."""


class ConfigError(BirnodeError, ValueError):
    """Run configuration is invalid."""
