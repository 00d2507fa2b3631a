"""Exception types shared across the package."""
from __future__ import annotations


class CutStokesError(Exception):
    """Base class for all package-specific errors."""


# geometry
class NoCrossing(CutStokesError):
    """Segment endpoints do not bracket a level-set sign change."""


class NonConvergence(CutStokesError):
    """An iterative procedure failed to reach its tolerance."""


# mesh
class DegenerateBox(CutStokesError):
    """Bounding box has non-positive width or height."""


class EmptyClip(CutStokesError):
    """Clipped element area fell below the drop threshold."""


class MultiComponent(CutStokesError):
    """Element/domain intersection has more than one connected component."""


class UncoveredDomain(CutStokesError):
    """A sampled interior point lies in no active element."""


# quadrature
class UnsupportedDegree(CutStokesError):
    """Requested polynomial exactness degree is out of range."""


class DegenerateSegment(CutStokesError):
    """Segment endpoints coincide (below length tolerance)."""


class NonStarShaped(CutStokesError):
    """No valid fan point found for sub-triangulating a polygon."""


class NormalUndefined(CutStokesError):
    """Level-set gradient vanishes where a boundary normal is needed."""


# fespace
class NumericallySingular(CutStokesError):
    """Gram–Schmidt pivot collapsed; element cannot carry the basis."""


# assembly
class QuadratureMissing(CutStokesError):
    """A required quadrature rule is absent from the cache."""


# solver
class SingularSystem(CutStokesError):
    """Sparse factorization failed or the residual contract was violated."""


class PenaltyTooSmall(CutStokesError):
    """Coercivity diagnostic failed: penalty parameter is too small."""


class IllConditionedWarning(UserWarning):
    """Condition estimate of the solved system exceeds the reporting bound."""


# analysis
class NonHalvingSequence(CutStokesError):
    """Convergence rates require mesh sizes that halve between rows."""


# cli
class UnknownProblem(CutStokesError):
    """No manufactured problem registered under the requested name."""
