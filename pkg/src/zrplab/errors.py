"""Shared exception types."""


class OutOfDomainError(ValueError):
    """Argument outside the domain of convergence / definition."""


class SaturationError(OutOfDomainError):
    """Requested density at or above the supremum of the density function."""


class ConvergenceError(RuntimeError):
    """Series, root finder or linear solver exhausted its budget."""
