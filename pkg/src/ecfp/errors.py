"""Exception types shared across the package."""


class ECFPError(Exception):
    """Base class for all package errors."""


class InvalidArgument(ECFPError, ValueError):
    """Raised when an input violates a documented precondition."""


class CapacityError(ECFPError):
    """Raised when a brute-force evaluation would exceed the enumeration cap."""


class GenerationError(ECFPError):
    """Raised when a random structure cannot be generated within the retry budget."""


class ConvergenceError(ECFPError):
    """Raised when an iterative solver fails to reach its tolerance.

    The best residual seen and the corresponding iterate are attached so callers
    can decide whether the partial answer is usable.
    """

    def __init__(self, message, best_residual=None, best_iterate=None):
        super().__init__(message)
        self.best_residual = best_residual
        self.best_iterate = best_iterate


class InvariantViolation(ECFPError):
    """Raised when a runtime invariant check fails."""

    def __init__(self, invariant, message):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant
