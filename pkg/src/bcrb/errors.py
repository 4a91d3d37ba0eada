"""Exception types shared across the package."""

from __future__ import annotations


class BcrbError(Exception):
    """Base class for all package errors."""


class GridMismatchError(BcrbError):
    """Two objects were expected to live on the same grid but do not."""

    def __init__(self, left: object, right: object, context: str = ""):
        self.left = left
        self.right = right
        msg = f"grid mismatch: {left!r} vs {right!r}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class GridValueError(BcrbError):
    """A field violates a pointwise requirement (positivity, floor, shape)."""


class BoundaryConditionError(BcrbError):
    """The product of prior and vector field does not vanish on the boundary.

    The Gill-Levit construction is valid only when that product vanishes on
    the domain boundary; enlarging the box (or switching to a prior that
    decays inside it) restores the hypothesis.
    """


class DegenerateBoundError(BcrbError):
    """The bound denominator vanished: no information and no prior curvature."""


class SingularInformationError(BcrbError):
    """A pointwise information matrix is singular where an inverse is needed.

    The per-point natural field choice requires the weight vector to lie in
    the range of the information matrix; at rank-deficient points no such
    field exists.
    """


class OperatorRangeError(BcrbError):
    """The weight field is not in the numerical range of the field operator.

    There is no least-favorable field in this case, and no fallback is
    provided; the solve fails loudly instead of returning a meaningless
    value.
    """


class EigensolverError(BcrbError):
    """The ground-state eigensolver failed to converge."""


class SpectralDomainError(BcrbError):
    """A frequency-domain integrand does not decay within the supplied grid."""


class ProjectionError(BcrbError):
    """A state could not be represented in the requested finite basis."""


class ScenarioError(BcrbError):
    """A scenario configuration is structurally invalid."""

    def __init__(self, message: str, field_path: str = ""):
        self.field_path = field_path
        super().__init__(message if not field_path else f"{field_path}: {message}")
