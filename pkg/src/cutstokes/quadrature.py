"""Quadrature rules for triangles, segments, clipped polygons, and curved facets.

Triangle rules are collapsed-coordinate (Duffy) products of Gauss-Legendre and
Gauss-Jacobi(1,0) lines: all weights positive, exact to the requested total
degree.  Clipped polygons are integrated by fanning from an interior point;
when an element carries a curved boundary chord, that chord is first refined
into sub-chords whose endpoints lie on the zero level set, and the same
refined polyline is reused by the matching facet rule so that element-wise
integration by parts holds to machine precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import (
    DegenerateSegment,
    NonStarShaped,
    NormalUndefined,
    UnsupportedDegree,
)
from .geometry import LevelSetDomain, boundary_normal, eval_level_set, segment_root
from .mesh import PolytopicElement

MAX_DEGREE = 20
FD_STEP = 1e-6


@dataclass(frozen=True)
class QuadRule:
    """Points, weights and the polynomial degree the rule integrates exactly.

    ``normals`` is populated only for boundary-facet rules, one outward unit
    normal per point.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness: int
    normals: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


@lru_cache(maxsize=None)
def _reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Rule on the unit reference triangle {x, y >= 0, x + y <= 1}."""
    n = (degree + 2) // 2
    xg, wg = roots_legendre(n)
    xg = 0.5 * (xg + 1.0)
    wg = 0.5 * wg
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    xj = 0.5 * (xj + 1.0)
    wj = 0.25 * wj
    u = np.repeat(xg, n)
    v = np.tile(xj, n)
    pts = np.column_stack([u * (1.0 - v), v])
    wts = np.repeat(wg, n) * np.tile(wj, n)
    return pts, wts


def triangle_rule(degree: int, triangle: np.ndarray) -> QuadRule:
    """Positive-weight rule exact for total degree ``degree`` on a triangle."""
    if not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(f"triangle rule degree {degree} outside [1, {MAX_DEGREE}]")
    tri = np.asarray(triangle, dtype=float)
    ref_pts, ref_wts = _reference_triangle_rule(degree)
    e1 = tri[1] - tri[0]
    e2 = tri[2] - tri[0]
    det = e1[0] * e2[1] - e1[1] * e2[0]
    pts = tri[0] + ref_pts[:, :1] * e1 + ref_pts[:, 1:] * e2
    # reference weights sum to 1/2, the physical area is |det|/2
    wts = ref_wts * abs(det)
    return QuadRule(points=pts, weights=wts, exactness=degree)


def segment_rule(a: np.ndarray, b: np.ndarray, degree: int) -> QuadRule:
    """Gauss-Legendre rule along the straight segment from ``a`` to ``b``."""
    if not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(f"segment rule degree {degree} outside [1, {MAX_DEGREE}]")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    length = float(np.hypot(*(b - a)))
    if length < 1e-14:
        raise DegenerateSegment(f"segment of length {length:.3e}")
    xg, wg = roots_legendre((degree + 2) // 2)
    t = 0.5 * (xg + 1.0)
    pts = a + t[:, None] * (b - a)
    wts = 0.5 * wg * length
    return QuadRule(points=pts, weights=wts, exactness=degree)


def refine_boundary_polyline(
    a: np.ndarray,
    b: np.ndarray,
    domain: LevelSetDomain,
    n_sub: int,
    tol: float = 1e-12,
) -> np.ndarray:
    """Split the chord a-b into ``n_sub`` sub-chords with endpoints on the zero set.

    Interior seed points are placed uniformly along the chord and pulled onto
    the level set along the local finite-difference normal direction.  The
    chord endpoints are kept as-is (they already lie on the zero set up to the
    clipping tolerance).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if n_sub < 1:
        raise ValueError(f"n_sub must be >= 1, got {n_sub}")
    pts = np.empty((n_sub + 1, 2))
    pts[0] = a
    pts[-1] = b
    if n_sub == 1:
        return pts
    chord = float(np.hypot(*(b - a)))
    for i in range(1, n_sub):
        t = i / n_sub
        seed = a + t * (b - a)
        phi = eval_level_set(domain, seed)
        if abs(phi) <= tol:
            pts[i] = seed
            continue
        direction = boundary_normal(domain, seed, step=FD_STEP)
        # March along the normal until the level set changes sign, growing
        # the bracket geometrically, then bisect on that bracket.
        step = 0.5 * chord / n_sub if chord > 0 else 0.5
        sign = -1.0 if phi > 0 else 1.0
        lo = seed
        hi = None
        for _ in range(60):
            candidate = seed + sign * step * direction
            if eval_level_set(domain, candidate) * phi < 0:
                hi = candidate
                break
            step *= 2.0
        if hi is None:
            raise NonStarShaped(
                f"could not bracket the boundary from seed {seed.tolist()}"
            )
        pts[i] = segment_root(domain, lo, hi, tol=tol)
    return pts


def _polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    x = vertices[:, 0]
    y = vertices[:, 1]
    xn = np.roll(x, -1)
    yn = np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-300:
        return vertices.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def effective_polygon(element: PolytopicElement, n_sub: int, tol: float = 1e-12) -> np.ndarray:
    """Element polygon with every curved chord replaced by its refined polyline."""
    if element.domain is None or not np.any(element.edge_on_boundary):
        return element.vertices
    pieces: list[np.ndarray] = []
    n = element.n_vertices
    for k in range(n):
        p0 = element.vertices[k]
        p1 = element.vertices[(k + 1) % n]
        if element.edge_on_boundary[k] and element.edge_parent[k] < 0:
            poly = refine_boundary_polyline(p0, p1, element.domain, n_sub, tol=tol)
            pieces.append(poly[:-1])
        else:
            pieces.append(p0[None, :])
    return np.concatenate(pieces, axis=0)


def _fan_rule(vertices: np.ndarray, center: np.ndarray, degree: int) -> QuadRule | None:
    """Fan rule about ``center``; None if any fan triangle is degenerate or flipped."""
    n = vertices.shape[0]
    pts_list = []
    wts_list = []
    scale = float(np.abs(vertices - center).max()) + 1.0
    for k in range(n):
        p0 = vertices[k]
        p1 = vertices[(k + 1) % n]
        det = (p0[0] - center[0]) * (p1[1] - center[1]) - (p0[1] - center[1]) * (
            p1[0] - center[0]
        )
        if det <= 1e-15 * scale * scale:
            if abs(det) <= 1e-15 * scale * scale:
                continue  # collinear sliver contributes nothing
            return None
        rule = triangle_rule(degree, np.array([center, p0, p1]))
        pts_list.append(rule.points)
        wts_list.append(rule.weights)
    if not pts_list:
        return None
    return QuadRule(
        points=np.concatenate(pts_list),
        weights=np.concatenate(wts_list),
        exactness=degree,
    )


def polytope_rule(
    element: PolytopicElement,
    degree: int,
    n_sub: int = 8,
    tol: float = 1e-12,
) -> QuadRule:
    """Volume rule on a clipped element, exact to ``degree`` for polynomials.

    Straight-sided elements use a centroid fan (a plain triangle passes
    through unchanged); elements with a curved chord get the chord refined
    into ``n_sub`` sub-chords before fanning, so the polygon the rule
    integrates over matches the one traced by the facet rules.
    """
    if not 1 <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(f"polytope rule degree {degree} outside [1, {MAX_DEGREE}]")
    curved = element.domain is not None and np.any(
        element.edge_on_boundary & (element.edge_parent < 0)
    )
    if element.n_vertices == 3 and not curved:
        return triangle_rule(degree, element.vertices)
    vertices = effective_polygon(element, n_sub, tol=tol) if curved else element.vertices
    center = _polygon_centroid(vertices)
    rule = _fan_rule(vertices, center, degree)
    if rule is not None:
        return rule
    # Fall back to a kernel-point search before giving up.
    candidates = [vertices.mean(axis=0)]
    candidates.extend(0.5 * (center + v) for v in vertices)
    for candidate in candidates:
        rule = _fan_rule(vertices, candidate, degree)
        if rule is not None:
            return rule
    raise NonStarShaped(
        f"element {element.id}: no interior fan point found for {vertices.shape[0]}-gon"
    )


def curved_facet_rule(
    endpoints: np.ndarray,
    domain: LevelSetDomain,
    degree: int,
    n_sub: int = 8,
    tol: float = 1e-12,
) -> QuadRule:
    """Boundary-facet rule: per-sub-chord Gauss points with pointwise normals.

    The sub-chord endpoints come from the same polyline refinement as the
    volume fan, so line and volume integrals see one and the same polygonal
    boundary.  Normals are finite-difference level-set gradients, normalized.
    """
    polyline = refine_boundary_polyline(
        endpoints[0], endpoints[1], domain, n_sub, tol=tol
    )
    pts_list = []
    wts_list = []
    for k in range(polyline.shape[0] - 1):
        rule = segment_rule(polyline[k], polyline[k + 1], degree)
        pts_list.append(rule.points)
        wts_list.append(rule.weights)
    points = np.concatenate(pts_list)
    weights = np.concatenate(wts_list)
    normals = np.empty_like(points)
    for i, pt in enumerate(points):
        normals[i] = boundary_normal(domain, pt, step=FD_STEP)
    return QuadRule(points=points, weights=weights, exactness=degree, normals=normals)


def facet_rule(
    endpoints: np.ndarray,
    degree: int,
    normal: np.ndarray | None = None,
) -> QuadRule:
    """Straight-facet rule; attaches a constant normal when one is supplied."""
    rule = segment_rule(endpoints[0], endpoints[1], degree)
    if normal is None:
        return rule
    normals = np.broadcast_to(np.asarray(normal, dtype=float), rule.points.shape).copy()
    return QuadRule(
        points=rule.points,
        weights=rule.weights,
        exactness=rule.exactness,
        normals=normals,
    )
