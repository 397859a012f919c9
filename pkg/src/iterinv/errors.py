"""Exception types shared across the package."""


class IterInvError(Exception):
    """Base class for all package errors."""


class InvalidInput(IterInvError, ValueError):
    pass


class EmptyData(IterInvError, ValueError):
    pass


class SingularJacobian(IterInvError, ArithmeticError):
    pass


class NotMonotone(IterInvError, ValueError):
    pass


class PreconditionFailed(IterInvError, ValueError):
    pass


class DegenerateIteration(IterInvError, ArithmeticError):
    """Raised when a regression step has no output variance to fit against.

    ``state`` is the iterate that could not be regressed; ``trace`` is filled
    in by :func:`iterinv.inversion.run` with the states produced so far.
    """

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace
