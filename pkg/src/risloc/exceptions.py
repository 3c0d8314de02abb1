"""Exception types raised by the estimation and bound routines."""


class DegenerateGeometryError(ValueError):
    """Two points that must be distinct coincide, or bearings are parallel."""


class InfeasibleFrequencyError(ValueError):
    """A spatial frequency maps to a direction cosine outside [-1, 1]."""


class OverRegularizedError(ValueError):
    """The l1 solution is identically zero."""


class IllConditionedError(ValueError):
    """A least-squares system is rank deficient."""


class UnidentifiableError(ValueError):
    """The Fisher information matrix is singular.

    Attributes
    ----------
    null_space : ndarray, shape (n, k)
        Orthonormal basis of the (scaled) directions below the eigenvalue floor.
    """

    def __init__(self, message, null_space=None):
        super().__init__(message)
        self.null_space = null_space


class NonFiniteObjectiveError(FloatingPointError):
    """An objective evaluated to NaN or inf during a simplex search."""
