"""Implicit level-set domains, point classification, and boundary root-finding.

A domain is the open set {phi < 0} of a scalar level-set function phi. The two
built-in domains are an axis-aligned square (piecewise-linear phi, straight
boundary) and a disc (quadratic phi, curved boundary).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import NoCrossing, NonConvergence

#: Default absolute tolerance on phi for "on the boundary" decisions.
BOUNDARY_TOL = 1e-12

#: Iteration cap for bisection in segment_root.
MAX_BISECTION_ITERATIONS = 200


@dataclass(frozen=True)
class LevelSetDomain:
    """Domain {phi < 0} with a covering box and a curvature flag.

    ``phi`` accepts scalar or ndarray coordinates and broadcasts.
    ``bounding_box`` is (xmin, ymin, xmax, ymax) and contains {phi <= 0};
    it is the box the background mesh will cover.
    ``curved_boundary`` marks whether {phi = 0} is curved (True for the
    disc), which tells the quadrature module to refine boundary chords.
    """

    name: str
    phi: Callable
    bounding_box: tuple[float, float, float, float]
    curved_boundary: bool = False


class PointSide(Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"
    ON_BOUNDARY = "on_boundary"


@dataclass(frozen=True)
class PointClass:
    """Classification of a point against the level set at a tolerance."""

    value: PointSide
    tolerance: float


def square_domain(lo: float = 0.0, hi: float = 1.0, margin: float = 0.25) -> LevelSetDomain:
    """Square (lo, hi)^2 described by a piecewise-linear level set.

    phi(x, y) = |x-c| + |y-c| + ||x-c| - |y-c|| - (hi-lo), with c the center;
    algebraically phi = 2*max(|x-c|, |y-c|) - (hi-lo), so {phi = 0} is the
    square's boundary. The covering box extends ``margin`` beyond each side.
    """
    if not hi > lo:
        raise ValueError(f"square needs hi > lo, got [{lo}, {hi}]")
    c = 0.5 * (lo + hi)
    side = hi - lo

    def phi(x, y):
        ax = np.abs(np.asarray(x, dtype=float) - c)
        ay = np.abs(np.asarray(y, dtype=float) - c)
        out = ax + ay + np.abs(ax - ay) - side
        return out if out.ndim else float(out)

    box = (lo - margin, lo - margin, hi + margin, hi + margin)
    return LevelSetDomain(name="square", phi=phi, bounding_box=box)


#: Default half-width of the disc's covering box. Slightly inflated
#: (1.25 * 1.00001) so grid nodes never fall exactly on the unit circle and
#: the level-0 grid spacing is 0.62500625 with four cells per side.
DISC_BOX_HALF_WIDTH = 1.2500125


def disc_domain(radius: float = 1.0, half_width: float | None = None) -> LevelSetDomain:
    """Disc of given radius centered at the origin: phi = x^2 + y^2 - r^2."""
    if not radius > 0:
        raise ValueError(f"disc needs radius > 0, got {radius}")
    if half_width is None:
        half_width = DISC_BOX_HALF_WIDTH * radius
    r2 = radius * radius

    def phi(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = x * x + y * y - r2
        return out if out.ndim else float(out)

    box = (-half_width, -half_width, half_width, half_width)
    return LevelSetDomain(name="disc", phi=phi, bounding_box=box, curved_boundary=True)


def eval_level_set(domain: LevelSetDomain, point) -> float:
    """Evaluate phi at a single point (x, y)."""
    x, y = point
    return float(domain.phi(x, y))


def classify_point(domain: LevelSetDomain, point, tol: float = BOUNDARY_TOL) -> PointClass:
    """Classify a point as Inside / Outside / OnBoundary at tolerance tol."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    value = eval_level_set(domain, point)
    if abs(value) <= tol:
        side = PointSide.ON_BOUNDARY
    elif value < 0:
        side = PointSide.INSIDE
    else:
        side = PointSide.OUTSIDE
    return PointClass(value=side, tolerance=tol)


def segment_root(domain: LevelSetDomain, a, b, tol: float = BOUNDARY_TOL) -> np.ndarray:
    """Locate a boundary point on segment [a, b] by bisection.

    Requires a strict sign change: phi(a) * phi(b) < 0. The segment is
    canonicalized (endpoints ordered lexicographically) first, so the result
    is bitwise identical regardless of argument order. Raises NoCrossing
    without a sign change and NonConvergence if |phi| <= tol is not reached
    within the iteration cap (does not occur for Lipschitz phi).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if (b[0], b[1]) < (a[0], a[1]):
        a, b = b, a
    fa = eval_level_set(domain, a)
    fb = eval_level_set(domain, b)
    if fa * fb >= 0:
        raise NoCrossing(
            f"phi({tuple(a)})={fa:g} and phi({tuple(b)})={fb:g} do not bracket a root"
        )
    lo, hi = a, b
    flo = fa
    for _ in range(MAX_BISECTION_ITERATIONS):
        mid = 0.5 * (lo + hi)
        fmid = eval_level_set(domain, mid)
        if abs(fmid) <= tol:
            return mid
        if flo * fmid < 0:
            hi = mid
        else:
            lo, flo = mid, fmid
    raise NonConvergence(
        f"bisection did not reach |phi| <= {tol:g} in {MAX_BISECTION_ITERATIONS} iterations"
    )


def boundary_normal(domain: LevelSetDomain, point, step: float = 1e-6) -> np.ndarray:
    """Outward unit normal grad(phi)/|grad(phi)| by central differences.

    Raises NormalUndefined when the gradient magnitude is below 1e-8.
    """
    from .errors import NormalUndefined

    x, y = float(point[0]), float(point[1])
    gx = (domain.phi(x + step, y) - domain.phi(x - step, y)) / (2.0 * step)
    gy = (domain.phi(x, y + step) - domain.phi(x, y - step)) / (2.0 * step)
    norm = float(np.hypot(gx, gy))
    if norm < 1e-8:
        raise NormalUndefined(f"grad(phi) ~ 0 at ({x:g}, {y:g})")
    return np.array([gx / norm, gy / norm])
