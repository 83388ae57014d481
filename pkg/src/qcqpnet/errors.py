"""Exception types raised across the package."""


class QcqpError(Exception):
    """Base class for solver-side failures."""


class NotPositiveDefiniteError(ValueError):
    """A matrix that must be symmetric positive definite is not."""


class DimensionMismatchError(ValueError):
    pass


class UnboundedCoverError(QcqpError):
    """The tangent polytope of a boundary point set is unbounded."""


class InfeasibleError(QcqpError):
    """No point satisfies the constraints."""


class FactorizationError(QcqpError):
    """A KKT system could not be factorized (rank-deficient equalities)."""


class InfiniteEnergyError(ValueError):
    """Riesz energy requested for a point set with coincident points."""
