"""Exception hierarchy shared by all statecap modules."""


class StatecapError(Exception):
    """Base class for every error raised by the package."""


class InvalidInput(StatecapError, ValueError):
    pass


class NonConvergence(StatecapError, RuntimeError):
    """An iterative solver stopped before certifying its tolerance.

    The best bracket found so far is attached as ``bracket``.
    """

    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class DegenerateDispersion(StatecapError, ValueError):
    pass


class InvalidModel(StatecapError, ValueError):
    pass


class Unsupported(StatecapError, NotImplementedError):
    pass


class UnsupportedModel(Unsupported):
    pass


class NotErgodic(StatecapError, ValueError):
    pass


class NonDiagonalizable(StatecapError, ArithmeticError):
    pass


class InvalidEpsilon(StatecapError, ValueError):
    pass


class BetaMismatch(StatecapError, ValueError):
    pass


class NoBracket(StatecapError, RuntimeError):
    pass


class BudgetExceeded(StatecapError, RuntimeError):
    pass


class EnumerationTooLarge(StatecapError, RuntimeError):
    pass


class InconsistentType(StatecapError, ValueError):
    pass


class OutOfValidity(StatecapError, ValueError):
    pass


class SchemaError(StatecapError, ValueError):
    pass


class TaskError(StatecapError, RuntimeError):
    pass
