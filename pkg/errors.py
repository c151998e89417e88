"""Exception types raised by the polar FEEC library."""
from typing import Optional


class PolarFEECError(Exception):
    """Base class for all library errors."""


class InvalidInputError(PolarFEECError, ValueError):
    """Arguments violate a documented precondition."""


class DomainError(PolarFEECError, ValueError):
    """Evaluation point lies outside the logical domain."""


class NodeAdmissibilityError(PolarFEECError):
    """Collocation matrix is singular for the given nodes."""


class PoleSingularityError(PolarFEECError):
    """Pushforward of a 1-form or 2-form requested at s = 0."""


class GeometryError(PolarFEECError):
    """Mapping data is malformed."""


class IterativeSolverError(PolarFEECError, RuntimeError):
    """Iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: Optional[float] = None, iterations: Optional[int] = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
