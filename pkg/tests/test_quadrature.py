"""Quadrature tests: triangle/segment Gauss rules, clipped-polygon fans,
and curved boundary-facet rules.

Exactness is checked against closed-form monomial integrals (affine map plus
trinomial expansion; ear-clipping for polygons) computed independently in
tests.oracles.
"""
import numpy as np
import pytest

from cutstokes.errors import (
    DegenerateSegment,
    NonStarShaped,
    NormalUndefined,
    UnsupportedDegree,
)
from cutstokes.geometry import LevelSetDomain, disc_domain, square_domain
from cutstokes.mesh import PolytopicElement, build_active_mesh, build_background
from cutstokes.quadrature import (
    curved_facet_rule,
    effective_polygon,
    facet_rule,
    polytope_rule,
    segment_rule,
    triangle_rule,
)

from .oracles import (
    gauss_segment_integral,
    monomial_integral_triangle,
    polygon_area,
    polygon_monomial_integral,
)

REF_TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _monomials(max_degree):
    return [(a, b) for total in range(max_degree + 1)
            for a in range(total + 1) for b in [total - a]]


def _rule_monomial(rule, a, b):
    return float(np.dot(rule.weights, rule.points[:, 0] ** a * rule.points[:, 1] ** b))


class TestTriangleRule:
    def test_constant_on_reference(self):
        rule = triangle_rule(1, REF_TRIANGLE)
        assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)

    def test_x2y2_on_reference(self):
        rule = triangle_rule(4, REF_TRIANGLE)
        assert _rule_monomial(rule, 2, 2) == pytest.approx(1.0 / 180.0, rel=1e-13)

    def test_exactness_all_degrees(self):
        tri = np.array([[0.2, 0.1], [1.1, 0.3], [0.4, 1.2]])
        for degree in range(1, 21):
            rule = triangle_rule(degree, tri)
            for a, b in _monomials(degree):
                exact = monomial_integral_triangle(tri, a, b)
                assert _rule_monomial(rule, a, b) == pytest.approx(exact, rel=1e-12), \
                    f"degree {degree}, monomial x^{a} y^{b}"

    def test_positive_weights_and_area(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            tri = rng.random((3, 2)) * 2.0 - 1.0
            area = abs(polygon_area(tri))
            if area < 1e-3:
                continue
            for degree in (1, 5, 12, 20):
                rule = triangle_rule(degree, tri)
                assert np.all(rule.weights > 0.0)
                assert rule.weights.sum() == pytest.approx(area, rel=1e-13)

    def test_degree_limits(self):
        with pytest.raises(UnsupportedDegree):
            triangle_rule(21, REF_TRIANGLE)
        with pytest.raises(UnsupportedDegree):
            triangle_rule(0, REF_TRIANGLE)


class TestSegmentRule:
    def test_cubic(self):
        rule = segment_rule((0.0, 0.0), (1.0, 0.0), 3)
        assert _rule_monomial(rule, 3, 0) == pytest.approx(0.25, rel=1e-14)

    def test_weight_sum_is_length(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            a, b = rng.random(2) * 2 - 1, rng.random(2) * 2 - 1
            rule = segment_rule(a, b, 5)
            assert np.all(rule.weights > 0.0)
            assert rule.weights.sum() == pytest.approx(np.linalg.norm(b - a), rel=1e-14)

    def test_point_count(self):
        for degree in range(1, 21):
            rule = segment_rule((0.0, 0.0), (1.0, 1.0), degree)
            assert rule.n_points == (degree + 2) // 2  # ceil((degree+1)/2)

    def test_exactness_against_gauss_oracle(self):
        a, b = np.array([0.3, -0.2]), np.array([1.1, 0.7])
        for degree in (3, 8, 15):
            rule = segment_rule(a, b, degree)
            for k in range(degree + 1):
                exact = gauss_segment_integral(lambda x, y: x ** k, a, b)
                assert _rule_monomial(rule, k, 0) == pytest.approx(exact, rel=1e-12)

    def test_degenerate_segment(self):
        with pytest.raises(DegenerateSegment):
            segment_rule((0.5, 0.5), (0.5, 0.5), 3)

    def test_degree_limits(self):
        with pytest.raises(UnsupportedDegree):
            segment_rule((0.0, 0.0), (1.0, 0.0), 21)


@pytest.fixture(scope="module")
def disc_mesh():
    dom = disc_domain()
    return build_active_mesh(build_background(dom.bounding_box, 0.62500625 / 2), dom)


@pytest.fixture(scope="module")
def offset_square_mesh():
    dom = square_domain()
    return build_active_mesh(build_background((-0.3, -0.3, 1.2, 1.2), 0.25), dom)


class TestPolytopeRule:
    def test_uncut_triangle_passthrough(self, disc_mesh):
        elem = next(e for e in disc_mesh.elements
                    if e.n_vertices == 3 and not np.any(e.edge_on_boundary))
        direct = triangle_rule(6, elem.vertices)
        fanned = polytope_rule(elem, 6)
        assert np.array_equal(direct.points, fanned.points)
        assert np.array_equal(direct.weights, fanned.weights)

    def test_straight_clip_area_matches_shoelace(self, offset_square_mesh):
        polygons = [e for e in offset_square_mesh.elements if e.n_vertices > 3]
        assert len(polygons) >= 10
        for e in polygons:
            rule = polytope_rule(e, 4)
            assert np.all(rule.weights > 0.0)
            assert rule.weights.sum() == pytest.approx(
                polygon_area(e.vertices), rel=1e-13)

    def test_straight_clip_monomial_exactness(self, offset_square_mesh):
        # fan rule vs independent ear-clipping triangulation, all monomials
        polygons = [e for e in offset_square_mesh.elements if e.n_vertices > 3]
        for e in polygons:
            rule = polytope_rule(e, 10)
            for a, b in _monomials(10):
                exact = polygon_monomial_integral(e.vertices, a, b)
                scale = max(abs(exact),
                            float(np.dot(rule.weights,
                                         np.abs(rule.points[:, 0]) ** a
                                         * np.abs(rule.points[:, 1]) ** b)))
                assert abs(_rule_monomial(rule, a, b) - exact) <= 1e-12 * scale

    def test_curved_clip_monomial_exactness(self, disc_mesh):
        # the rule integrates over the chord-refined polygon; ear-clipping
        # that same polygon must agree for every monomial up to the degree
        curved = [e for e in disc_mesh.elements
                  if e.domain is not None and np.any(e.edge_on_boundary)]
        assert len(curved) >= 20
        for e in curved:
            rule = polytope_rule(e, 8, n_sub=8)
            target = effective_polygon(e, 8)
            for a, b in _monomials(8):
                exact = polygon_monomial_integral(target, a, b)
                scale = max(abs(exact),
                            float(np.dot(rule.weights,
                                         np.abs(rule.points[:, 0]) ** a
                                         * np.abs(rule.points[:, 1]) ** b)))
                assert abs(_rule_monomial(rule, a, b) - exact) <= 1e-12 * scale

    def test_effective_polygon_vertices_on_zero_set(self, disc_mesh):
        dom = disc_mesh.domain
        elem = next(e for e in disc_mesh.elements if e.domain is not None)
        refined = effective_polygon(elem, 8)
        n_chords = int(np.sum(elem.edge_on_boundary & (elem.edge_parent < 0)))
        assert refined.shape[0] == elem.n_vertices + n_chords * 7
        # inserted points sit on the circle
        base = {tuple(v) for v in elem.vertices}
        new_pts = [p for p in refined if tuple(p) not in base]
        assert len(new_pts) == n_chords * 7
        for p in new_pts:
            assert abs(dom.phi(p[0], p[1])) <= 1e-12

    def test_richardson_subdivision_consistency(self, disc_mesh):
        # The n-chord polyline inscribed in an arc of length s misses area
        # s^3/(12 n^2), so refining 8 -> 64 moves the integral by about
        # 0.0013 s^3 <= 0.0013 h_K^3 (measured max 0.00129 h_K^3 over this
        # mesh). A quadratic bound in h_K is dimensionally unreachable.
        for elem in disc_mesh.elements:
            if elem.domain is None:
                continue

            def integral(n_sub):
                rule = polytope_rule(elem, 6, n_sub=n_sub)
                return float(np.dot(rule.weights,
                                    rule.points[:, 0] ** 2 + rule.points[:, 1] ** 2))

            assert abs(integral(8) - integral(64)) < 0.01 * elem.h_K ** 3

    def test_subdivision_convergence_rate_volume(self, disc_mesh):
        elem = max((e for e in disc_mesh.elements if e.domain is not None),
                   key=lambda e: e.area)

        def integral(n_sub):
            rule = polytope_rule(elem, 6, n_sub=n_sub)
            return float(np.dot(rule.weights,
                                rule.points[:, 0] ** 2 + rule.points[:, 1] ** 2))

        i4, i8, i16, ref = integral(4), integral(8), integral(16), integral(128)
        rates = np.log2([abs(i4 - ref) / abs(i8 - ref), abs(i8 - ref) / abs(i16 - ref)])
        assert np.all(rates >= 1.8)

    def test_non_star_shaped_rejected(self):
        # U-shaped (staple) octagon: its kernel is empty, so no fan apex
        # exists and the rule construction must refuse
        vertices = np.array([
            [0.0, 0.0], [3.0, 0.0], [3.0, 3.0], [2.0, 3.0],
            [2.0, 1.0], [1.0, 1.0], [1.0, 3.0], [0.0, 3.0],
        ])
        elem = PolytopicElement(
            id=0, parent_triangle=-1, vertices=vertices, facets=[],
            h_K=np.sqrt(18.0), area=polygon_area(vertices),
            bbox=np.array([vertices.min(axis=0), vertices.max(axis=0)]),
            is_cut=True, edge_parent=np.full(8, 0),
            edge_on_boundary=np.zeros(8, dtype=bool), domain=None)
        with pytest.raises(NonStarShaped):
            polytope_rule(elem, 4)

    def test_degree_limits(self, disc_mesh):
        with pytest.raises(UnsupportedDegree):
            polytope_rule(disc_mesh.elements[0], 21)


class TestCurvedFacetRule:
    def test_straight_facet_total_weight(self):
        dom = square_domain()
        mesh = build_active_mesh(build_background(dom.bounding_box, 0.25), dom)
        facet = mesh.boundary_facets()[0]
        rule = curved_facet_rule(facet.endpoints, dom, 4, n_sub=8)
        length = np.linalg.norm(facet.endpoints[1] - facet.endpoints[0])
        assert rule.weights.sum() == pytest.approx(length, rel=1e-14)

    def test_disc_circumference(self):
        dom = disc_domain()
        mesh = build_active_mesh(build_background(dom.bounding_box, 2.0 ** -4), dom)
        total = sum(curved_facet_rule(f.endpoints, dom, 4, n_sub=8).weights.sum()
                    for f in mesh.boundary_facets())
        assert total == pytest.approx(2.0 * np.pi, abs=1e-4)

    def test_disc_normals_match_radial_direction(self, disc_mesh):
        dom = disc_mesh.domain
        for f in disc_mesh.boundary_facets()[:10]:
            rule = curved_facet_rule(f.endpoints, dom, 4, n_sub=8)
            assert rule.normals is not None
            radial = rule.points / np.linalg.norm(rule.points, axis=1, keepdims=True)
            assert np.max(np.linalg.norm(rule.normals - radial, axis=1)) < 1e-5

    def test_subdivision_convergence_rate(self, disc_mesh):
        # halving the chord length reduces the integral change by ~4x
        dom = disc_mesh.domain
        facet = disc_mesh.boundary_facets()[0]

        def integral(n_sub):
            rule = curved_facet_rule(facet.endpoints, dom, 8, n_sub=n_sub)
            return float(np.dot(rule.weights, np.exp(rule.points[:, 0])
                                * np.cos(rule.points[:, 1])))

        i4, i8, i16 = integral(4), integral(8), integral(16)
        rate = np.log2(abs(i4 - i8) / abs(i8 - i16))
        assert rate >= 1.8

    def test_flat_gradient_raises_normal_undefined(self):
        # phi = (x - 1/2)^3 vanishes with its gradient on the line x = 1/2,
        # so no normal direction can be recovered there
        def phi(x, y):
            x = np.asarray(x, dtype=float)
            y = np.asarray(y, dtype=float)
            out = (x - 0.5) ** 3 + 0.0 * y
            return out if out.ndim else float(out)

        flat = LevelSetDomain(name="flat", phi=phi,
                              bounding_box=(0.0, 0.0, 1.0, 1.0),
                              curved_boundary=True)
        endpoints = np.array([[0.5, 0.0], [0.5, 1.0]])
        with pytest.raises(NormalUndefined):
            curved_facet_rule(endpoints, flat, 4, n_sub=4)


class TestFacetRule:
    def test_constant_normal_attached(self):
        normal = np.array([0.0, -1.0])
        rule = facet_rule(np.array([[0.0, 0.0], [1.0, 0.0]]), 3, normal=normal)
        assert rule.normals.shape == rule.points.shape
        assert np.all(rule.normals == normal)

    def test_without_normal(self):
        rule = facet_rule(np.array([[0.0, 0.0], [1.0, 0.0]]), 3)
        assert rule.normals is None
