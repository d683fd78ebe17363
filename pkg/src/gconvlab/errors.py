"""Exception types shared across the package."""


class GconvError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GconvError):
    """Invalid configuration: unknown kinds, bad parameters, unusable grids."""


class ContractViolation(GconvError):
    """Caller broke an operation's precondition (dimension mismatch etc.)."""


class EvaluationError(GconvError):
    """An operator evaluation produced non-finite values.

    Carries a witness describing where the evaluation broke down.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class NonConvergence(GconvError):
    """Iteration budget exhausted before the certified residual met tolerance."""

    def __init__(self, message, iterations=0, best_residual=float("inf"), step=None):
        super().__init__(message)
        self.iterations = iterations
        self.best_residual = best_residual
        self.step = step


class DegenerateSystem(GconvError):
    """Preconditioner factorization failed even after regularization."""
