"""Exception hierarchy shared by all modules."""


class ParameterError(ValueError):
    """Invalid user-supplied parameter or inconsistent dimensions."""


class NumericalError(ArithmeticError):
    """A numerical procedure produced an unusable result."""


class ConvergenceError(NumericalError):
    """An iteration hit its budget before reaching the requested tolerance.

    Attributes
    ----------
    last : object
        Last iterate (solver specific).
    residual : float
        Residual of the last iterate.
    iterations : int
        Iterations performed.
    """

    def __init__(self, message, last=None, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.last = last
        self.residual = residual
        self.iterations = iterations


class InternalConsistencyError(RuntimeError):
    """A condition that should be impossible for valid input was violated."""
