"""Discontinuous polynomial spaces on the active mesh.

Each element carries its own orthonormal scalar basis: monomials in
bounding-box-scaled coordinates, orthonormalized against the element's own
L2 inner product (evaluated with a volume rule exact for the Gram degree).
Velocity uses degree p per component, pressure degree p - 1, both fully
discontinuous.  Basis coefficients are translation invariant, so the two
uncut-triangle orientations of the structured background share one
coefficient matrix each; only cut elements get individually built bases.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericallySingular, QuadratureMissing
from .mesh import ActiveMesh, FacetKind, PolytopicElement
from .quadrature import (
    MAX_DEGREE,
    QuadRule,
    curved_facet_rule,
    facet_rule,
    polytope_rule,
)

PIVOT_TOL = 1e-13

# element congruence-class labels
CLASS_LOWER = 0
CLASS_UPPER = 1
CLASS_INDIVIDUAL = 2


def space_dimension(degree: int) -> int:
    """dim P^degree in two variables."""
    return (degree + 1) * (degree + 2) // 2


def monomial_exponents(degree: int) -> np.ndarray:
    """Graded-lex exponent pairs: degree ascending, x-power descending within."""
    out = [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]
    return np.array(out, dtype=int)


def _scaled_monomials(points: np.ndarray, center: np.ndarray, halfwidth: np.ndarray,
                      exponents: np.ndarray, grad: bool = False):
    """Values (and gradients) of bbox-scaled monomials at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xi = (pts[:, 0] - center[0]) / halfwidth[0]
    eta = (pts[:, 1] - center[1]) / halfwidth[1]
    amax = int(exponents.max()) if len(exponents) else 0
    # power tables up to the max exponent
    xp = np.vander(xi, amax + 1, increasing=True)    # (n, amax+1)
    yp = np.vander(eta, amax + 1, increasing=True)
    a = exponents[:, 0]
    b = exponents[:, 1]
    V = xp[:, a] * yp[:, b]
    if not grad:
        return V
    dx = np.where(a > 0, a, 0)[None, :] * xp[:, np.maximum(a - 1, 0)] * yp[:, b]
    dy = xp[:, a] * np.where(b > 0, b, 0)[None, :] * yp[:, np.maximum(b - 1, 0)]
    return V, dx / halfwidth[0], dy / halfwidth[1]


@dataclass
class ElementBasis:
    """Orthonormal basis on one element: rows of ``coeffs`` combine monomials."""

    element_id: int
    degree: int
    dim: int
    coeffs: np.ndarray     # (dim, dim) lower triangular, possibly shared
    center: np.ndarray     # (2,) bbox center
    halfwidth: np.ndarray  # (2,) bbox half-extents
    exponents: np.ndarray  # (dim, 2), shared


def build_basis(element: PolytopicElement, degree: int, rule: QuadRule) -> ElementBasis:
    """Orthonormalize scaled monomials in the rule's inner product (MGS, twice)."""
    exponents = monomial_exponents(degree)
    m = len(exponents)
    center = element.bbox.mean(axis=0)
    halfwidth = 0.5 * (element.bbox[1] - element.bbox[0])
    halfwidth = np.where(halfwidth > 0, halfwidth, 1.0)
    V = _scaled_monomials(rule.points, center, halfwidth, exponents)
    w = rule.weights
    C = np.eye(m)
    Q = V.copy()
    for _ in range(2):
        for j in range(m):
            for i in range(j):
                r = float(np.dot(w * Q[:, i], Q[:, j]))
                Q[:, j] -= r * Q[:, i]
                C[j] -= r * C[i]
            norm = float(np.sqrt(np.dot(w * Q[:, j], Q[:, j])))
            if norm < PIVOT_TOL:
                raise NumericallySingular(
                    f"element {element.id}: basis pivot {norm:.3e} below {PIVOT_TOL:g} "
                    f"at monomial {tuple(exponents[j])}"
                )
            Q[:, j] /= norm
            C[j] /= norm
    return ElementBasis(element_id=element.id, degree=degree, dim=m, coeffs=C,
                        center=center, halfwidth=halfwidth, exponents=exponents)


def eval_basis(basis: ElementBasis, points: np.ndarray):
    """Basis values and gradients at physical points.

    Returns ``(values, grads)`` with shapes (n, dim) and (n, dim, 2); a single
    point gives (dim,) and (dim, 2).  Polynomials extend smoothly outside the
    element, so points need not lie inside it.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    V, dx, dy = _scaled_monomials(pts, basis.center, basis.halfwidth,
                                  basis.exponents, grad=True)
    values = V @ basis.coeffs.T
    grads = np.stack([dx @ basis.coeffs.T, dy @ basis.coeffs.T], axis=-1)
    if single:
        return values[0], grads[0]
    return values, grads


def l2_project(f, element: PolytopicElement, basis: ElementBasis,
               rule: QuadRule | None = None) -> np.ndarray:
    """Coefficients of the element-wise L2 projection of a scalar field."""
    if rule is None:
        rule = polytope_rule(element, min(2 * basis.degree + 2, MAX_DEGREE))
    values, _ = eval_basis(basis, rule.points)
    fvals = np.asarray(f(rule.points[:, 0], rule.points[:, 1]), dtype=float)
    return (rule.weights * fvals) @ values


@dataclass(frozen=True)
class DofMap:
    """Global unknown layout: velocity blocks, pressure blocks, one multiplier.

    Velocity dofs are element-major with the x-component block before the
    y-component block inside each element; pressure blocks follow all
    velocity dofs; the mean-pressure multiplier is the final unknown.
    """

    n_elements: int
    mv: int  # scalar velocity dofs per element (per component)
    mp: int  # pressure dofs per element

    @property
    def n_velocity(self) -> int:
        return 2 * self.mv * self.n_elements

    @property
    def n_pressure(self) -> int:
        return self.mp * self.n_elements

    @property
    def multiplier(self) -> int:
        return self.n_velocity + self.n_pressure

    @property
    def size(self) -> int:
        return self.n_velocity + self.n_pressure + 1

    def velocity(self, element: int, component: int) -> np.ndarray:
        start = 2 * self.mv * element + component * self.mv
        return np.arange(start, start + self.mv)

    def pressure(self, element: int) -> np.ndarray:
        start = self.n_velocity + self.mp * element
        return np.arange(start, start + self.mp)


@dataclass
class ElementClasses:
    """Congruence classes of active elements for shared-basis assembly."""

    labels: np.ndarray            # per element: CLASS_LOWER/UPPER/INDIVIDUAL
    members: list[np.ndarray]     # element ids per full class, ascending
    reps: list[int | None]        # representative element id per full class
    individual: np.ndarray        # element ids assembled one by one


def classify_elements(mesh: ActiveMesh) -> ElementClasses:
    """Full lower/upper triangles form two classes; everything else is individual."""
    parent = mesh.element_parent
    full = mesh.element_full
    labels = np.where(full, np.where(parent % 2 == 0, CLASS_LOWER, CLASS_UPPER),
                      CLASS_INDIVIDUAL)
    members = [np.flatnonzero(labels == c) for c in (CLASS_LOWER, CLASS_UPPER)]
    reps = [int(ids[0]) if len(ids) else None for ids in members]
    return ElementClasses(labels=labels, members=members, reps=reps,
                          individual=np.flatnonzero(labels == CLASS_INDIVIDUAL))


@dataclass
class SpacePair:
    """Velocity/pressure space pair with quadrature and basis caches."""

    mesh: ActiveMesh
    velocity_degree: int
    pressure_degree: int
    mv: int
    mp: int
    dofmap: DofMap
    bases_v: list[ElementBasis]
    bases_p: list[ElementBasis]
    classes: ElementClasses
    volume_degree: int
    facet_degree: int
    n_sub: int
    _volume_rules: dict = field(default_factory=dict, repr=False)
    _facet_rules: dict = field(default_factory=dict, repr=False)

    def volume_rule(self, element_id: int, degree: int | None = None) -> QuadRule:
        degree = self.volume_degree if degree is None else degree
        key = (element_id, degree)
        rule = self._volume_rules.get(key)
        if rule is None:
            element = self.mesh.elements[element_id]
            rule = polytope_rule(element, degree, n_sub=self.n_sub, tol=self.mesh.tol)
            self._volume_rules[key] = rule
        return rule

    def facet_rule(self, facet_id: int, degree: int | None = None) -> QuadRule:
        degree = self.facet_degree if degree is None else degree
        key = (facet_id, degree)
        rule = self._facet_rules.get(key)
        if rule is None:
            facet = self.mesh.facets[facet_id]
            if facet.kind is FacetKind.BOUNDARY and facet.curved:
                rule = curved_facet_rule(facet.endpoints, self.mesh.domain, degree,
                                         n_sub=self.n_sub, tol=self.mesh.tol)
            else:
                rule = facet_rule(facet.endpoints, degree, normal=facet.normal)
            self._facet_rules[key] = rule
        return rule


def build_spaces(mesh: ActiveMesh, order: int, *,
                 quad_degree_volume: int | None = None,
                 quad_degree_facet: int | None = None,
                 curved_subdivisions: int | None = None) -> SpacePair:
    """Build the degree-(order, order-1) discontinuous pair on the mesh."""
    if order < 1:
        raise ValueError(f"velocity degree must be >= 1, got {order}")
    p = int(order)
    volume_degree = quad_degree_volume if quad_degree_volume is not None else 2 * p + 2
    facet_degree = quad_degree_facet if quad_degree_facet is not None else 2 * p + 2
    n_sub = curved_subdivisions if curved_subdivisions is not None else 8
    if not 1 <= volume_degree <= MAX_DEGREE or not 1 <= facet_degree <= MAX_DEGREE:
        raise ValueError(
            f"quadrature degrees ({volume_degree}, {facet_degree}) outside "
            f"[1, {MAX_DEGREE}]"
        )

    classes = classify_elements(mesh)
    gram_degree = max(1, 2 * p)
    bases_v: list[ElementBasis | None] = [None] * mesh.n_elements
    bases_p: list[ElementBasis | None] = [None] * mesh.n_elements

    def build_pair(eid: int):
        element = mesh.elements[eid]
        rule = polytope_rule(element, gram_degree, n_sub=n_sub, tol=mesh.tol)
        return build_basis(element, p, rule), build_basis(element, p - 1, rule)

    # class representatives own the coefficients; members share them
    for label in (CLASS_LOWER, CLASS_UPPER):
        rep = classes.reps[label]
        if rep is None:
            continue
        rep_v, rep_p = build_pair(rep)
        for eid in classes.members[label]:
            if eid == rep:
                bases_v[eid], bases_p[eid] = rep_v, rep_p
                continue
            element = mesh.elements[eid]
            center = element.bbox.mean(axis=0)
            bases_v[eid] = ElementBasis(eid, p, rep_v.dim, rep_v.coeffs,
                                        center, rep_v.halfwidth, rep_v.exponents)
            bases_p[eid] = ElementBasis(eid, p - 1, rep_p.dim, rep_p.coeffs,
                                        center, rep_p.halfwidth, rep_p.exponents)
    for eid in classes.individual:
        bases_v[eid], bases_p[eid] = build_pair(int(eid))

    mv = space_dimension(p)
    mp = space_dimension(p - 1)
    dofmap = DofMap(n_elements=mesh.n_elements, mv=mv, mp=mp)
    return SpacePair(
        mesh=mesh, velocity_degree=p, pressure_degree=p - 1, mv=mv, mp=mp,
        dofmap=dofmap, bases_v=bases_v, bases_p=bases_p, classes=classes,
        volume_degree=volume_degree, facet_degree=facet_degree, n_sub=n_sub,
    )


def interpolate_field(f, mesh: ActiveMesh, degree: int,
                      spaces: SpacePair | None = None) -> np.ndarray:
    """Element-wise L2 projection of a scalar or vector field, stacked globally.

    A vector field (callable returning shape (..., 2)) produces coefficients in
    the velocity layout (x block then y block per element); a scalar field
    produces element-major scalar blocks.
    """
    if spaces is not None and degree == spaces.velocity_degree:
        bases = spaces.bases_v
    elif spaces is not None and degree == spaces.pressure_degree:
        bases = spaces.bases_p
    else:
        spaces = None  # degrees differ: build standalone bases below
    if spaces is None:
        gram_degree = max(1, 2 * degree)
        bases = [build_basis(e, degree, polytope_rule(e, gram_degree, tol=mesh.tol))
                 for e in mesh.elements]

    probe = np.asarray(f(np.array([0.0]), np.array([0.0])))
    vector = probe.shape[-1:] == (2,) and probe.ndim >= 1 and probe.shape[-1] == 2
    m = space_dimension(degree)
    proj_degree = min(2 * degree + 2, MAX_DEGREE)
    if vector:
        out = np.empty(2 * m * mesh.n_elements)
        for e, element in enumerate(mesh.elements):
            rule = polytope_rule(element, proj_degree, tol=mesh.tol)
            values, _ = eval_basis(bases[e], rule.points)
            fv = np.asarray(f(rule.points[:, 0], rule.points[:, 1]), dtype=float)
            out[2 * m * e: 2 * m * e + m] = (rule.weights * fv[:, 0]) @ values
            out[2 * m * e + m: 2 * m * (e + 1)] = (rule.weights * fv[:, 1]) @ values
        return out
    out = np.empty(m * mesh.n_elements)
    for e, element in enumerate(mesh.elements):
        rule = polytope_rule(element, proj_degree, tol=mesh.tol)
        out[m * e: m * (e + 1)] = l2_project(f, element, bases[e], rule)
    return out


def require_rules(spaces: SpacePair) -> None:
    """Materialize every rule assembly will need; missing ones raise early."""
    for e in range(spaces.mesh.n_elements):
        if spaces.volume_rule(e) is None:
            raise QuadratureMissing(f"element {e} has no volume rule")
    for f in range(spaces.mesh.n_facets):
        if spaces.facet_rule(f) is None:
            raise QuadratureMissing(f"facet {f} has no quadrature rule")
