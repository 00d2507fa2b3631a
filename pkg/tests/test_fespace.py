"""Tests for the per-element orthonormal discontinuous polynomial spaces."""
from __future__ import annotations

import numpy as np
import pytest

from cutstokes.errors import NumericallySingular
from cutstokes.fespace import (
    CLASS_INDIVIDUAL,
    CLASS_LOWER,
    CLASS_UPPER,
    DofMap,
    build_basis,
    build_spaces,
    classify_elements,
    eval_basis,
    interpolate_field,
    l2_project,
    monomial_exponents,
    require_rules,
    space_dimension,
)
from cutstokes.geometry import disc_domain, square_domain
from cutstokes.mesh import PolytopicElement, build_active_mesh, build_background
from cutstokes.problems import make_problem
from cutstokes.quadrature import QuadRule, polytope_rule

DISC_H0 = 0.62500625  # level-zero grid spacing of the default disc box


def _disc_mesh(level: int):
    domain = disc_domain()
    bg = build_background(domain.bounding_box, DISC_H0 / 2 ** level)
    return build_active_mesh(bg, domain)


def _square_mesh(h: float):
    domain = square_domain()
    bg = build_background(domain.bounding_box, h)
    return build_active_mesh(bg, domain)


def _gram(basis, rule: QuadRule) -> np.ndarray:
    values, _ = eval_basis(basis, rule.points)
    return values.T @ (rule.weights[:, None] * values)


@pytest.fixture(scope="module")
def disc_mesh():
    return _disc_mesh(1)


class TestSpaceDimension:
    def test_matches_triangle_numbers(self):
        assert [space_dimension(p) for p in range(5)] == [1, 3, 6, 10, 15]

    def test_counts_exponent_pairs(self):
        for p in range(11):
            assert len(monomial_exponents(p)) == space_dimension(p)

    def test_exponents_graded_lexicographic(self):
        exps = monomial_exponents(3)
        assert exps.tolist() == [
            [0, 0],
            [1, 0], [0, 1],
            [2, 0], [1, 1], [0, 2],
            [3, 0], [2, 1], [1, 2], [0, 3],
        ]


class TestBuildBasis:
    def test_degree_zero_is_inverse_root_area(self, disc_mesh):
        # The single orthonormal constant must equal measure^{-1/2} everywhere
        # (the measure the quadrature rule sees, which on a curved element is
        # the refined curved area, not the straight-chord polygon area), with
        # an identically zero gradient.
        for element in disc_mesh.elements[:: max(1, disc_mesh.n_elements // 7)]:
            rule = polytope_rule(element, 2, tol=disc_mesh.tol)
            basis = build_basis(element, 0, rule)
            pts = element.bbox[0] + np.random.default_rng(3).random((5, 2)) * (
                element.bbox[1] - element.bbox[0]
            )
            values, grads = eval_basis(basis, pts)
            assert np.allclose(values, float(rule.weights.sum()) ** -0.5,
                               rtol=1e-13)
            if not element.is_cut:
                assert np.allclose(values, element.area ** -0.5, rtol=1e-13)
            assert np.all(grads == 0.0)

    def test_coefficients_lower_triangular(self, disc_mesh):
        element = disc_mesh.elements[0]
        rule = polytope_rule(element, 6, tol=disc_mesh.tol)
        basis = build_basis(element, 3, rule)
        assert np.array_equal(basis.coeffs, np.tril(basis.coeffs))
        assert np.all(np.diag(basis.coeffs) > 0)

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_orthonormal_on_cut_boundary_elements(self, disc_mesh, degree):
        # Verify the Gram matrix with an independent, higher-degree rule than
        # the one used to orthonormalize: degree 2p + 4 instead of 2p.
        cut = [e for e in disc_mesh.elements if e.is_cut]
        assert len(cut) >= 8
        for element in cut:
            build_rule = polytope_rule(element, 2 * degree, tol=disc_mesh.tol)
            basis = build_basis(element, degree, build_rule)
            check_rule = polytope_rule(element, 2 * degree + 4, tol=disc_mesh.tol)
            G = _gram(basis, check_rule)
            assert np.max(np.abs(G - np.eye(basis.dim))) < 1e-10

    def test_orthonormal_every_element_cubic(self):
        # Worst case of the study family: cubic velocity basis on the finest
        # routinely tested cut mesh, checked on all elements at once.
        mesh = _disc_mesh(2)
        spaces = build_spaces(mesh, 3)
        worst = 0.0
        for element, basis in zip(mesh.elements, spaces.bases_v):
            rule = polytope_rule(element, 2 * 3 + 4, tol=mesh.tol)
            G = _gram(basis, rule)
            worst = max(worst, np.max(np.abs(G - np.eye(basis.dim))))
        assert worst < 1e-9

    def test_singular_when_rule_cannot_resolve_basis(self, disc_mesh):
        # A one-point rule makes every non-constant monomial linearly
        # dependent on the constant, so the second pivot must collapse.
        element = disc_mesh.elements[0]
        rule = QuadRule(
            points=element.vertices.mean(axis=0)[None, :],
            weights=np.array([element.area]),
            exactness=0,
        )
        with pytest.raises(NumericallySingular):
            build_basis(element, 1, rule)

    def test_singular_on_flat_element(self):
        # A degenerate element squashed onto the x axis: the monomial y
        # vanishes identically on it, which must be reported, not absorbed.
        pts = np.linspace(0.0, 1.0, 5)
        element = PolytopicElement(
            id=0,
            parent_triangle=-1,
            vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]]),
            facets=[],
            h_K=1.0,
            area=1.0,
            bbox=np.array([[0.0, 0.0], [1.0, 0.0]]),
            is_cut=True,
        )
        rule = QuadRule(
            points=np.column_stack([pts, np.zeros_like(pts)]),
            weights=np.full(5, 0.2),
            exactness=4,
        )
        with pytest.raises(NumericallySingular):
            build_basis(element, 1, rule)


class TestEvalBasis:
    def test_gradients_match_finite_differences(self, disc_mesh):
        # Largest cut element: representative geometry without the extreme
        # anisotropy of slivers, where fixed-step central differences lose
        # more digits than the tolerance allows.
        cut = [e for e in disc_mesh.elements if e.is_cut]
        element = max(cut, key=lambda e: e.area)
        rule = polytope_rule(element, 8, tol=disc_mesh.tol)
        basis = build_basis(element, 3, rule)
        rng = np.random.default_rng(71)
        pts = element.bbox[0] + rng.random((100, 2)) * (
            element.bbox[1] - element.bbox[0]
        )
        _, grads = eval_basis(basis, pts)
        step = 1e-6
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = step
            vp, _ = eval_basis(basis, pts + shift)
            vm, _ = eval_basis(basis, pts - shift)
            fd = (vp - vm) / (2 * step)
            scale = np.maximum(1.0, np.abs(grads[:, :, axis]))
            assert np.max(np.abs(fd - grads[:, :, axis]) / scale) < 1e-7

    def test_single_point_shapes(self, disc_mesh):
        element = disc_mesh.elements[0]
        basis = build_basis(element, 2, polytope_rule(element, 4, tol=disc_mesh.tol))
        values, grads = eval_basis(basis, element.vertices[0])
        assert values.shape == (6,)
        assert grads.shape == (6, 2)
        batch_v, batch_g = eval_basis(basis, element.vertices[:1])
        assert batch_v.shape == (1, 6)
        assert batch_g.shape == (1, 6, 2)
        assert np.array_equal(batch_v[0], values)
        assert np.array_equal(batch_g[0], grads)

    def test_extends_polynomially_outside_element(self, disc_mesh):
        # Projection of a quadratic is exact on the element, and the basis is
        # polynomial, so the reconstruction must match the quadratic even at
        # points far outside the element.
        element = disc_mesh.elements[0]
        basis = build_basis(element, 2, polytope_rule(element, 4, tol=disc_mesh.tol))

        def f(x, y):
            return 1.5 - 2.0 * x + 0.5 * y + x * y - 3.0 * y ** 2

        coeffs = l2_project(f, element, basis)
        far = element.bbox.mean(axis=0) + np.array([[10.0, -7.0], [-3.0, 12.0]])
        values, _ = eval_basis(basis, far)
        assert np.allclose(values @ coeffs, f(far[:, 0], far[:, 1]), rtol=1e-9)


class TestL2Project:
    def test_projection_is_idempotent(self, disc_mesh):
        element = next(e for e in disc_mesh.elements if e.is_cut)
        rule = polytope_rule(element, 8, tol=disc_mesh.tol)
        basis = build_basis(element, 3, rule)

        def f(x, y):
            return np.sin(3 * x) * np.cos(2 * y) + x

        coeffs = l2_project(f, element, basis)

        def fh(x, y):
            values, _ = eval_basis(basis, np.column_stack([x, y]))
            return values @ coeffs

        again = l2_project(fh, element, basis)
        assert np.max(np.abs(again - coeffs)) < 1e-11 * max(1.0, np.abs(coeffs).max())

    def test_degree_zero_projection_is_mean(self, disc_mesh):
        element = next(e for e in disc_mesh.elements if e.is_cut)
        rule = polytope_rule(element, 4, tol=disc_mesh.tol)
        basis = build_basis(element, 0, rule)
        coeffs = l2_project(lambda x, y: x, element, basis, rule)
        measure = float(rule.weights.sum())
        mean_x = float(np.dot(rule.weights, rule.points[:, 0])) / measure
        reconstructed = coeffs[0] * measure ** -0.5
        assert reconstructed == pytest.approx(mean_x, rel=1e-13)

    def test_reproduces_polynomials_with_gradients(self, disc_mesh):
        # Degree-p fields are fixed points of the projection: both values and
        # gradients of the reconstruction agree with the field.
        element = next(e for e in disc_mesh.elements if e.is_cut)
        degree = 2
        basis = build_basis(
            element, degree, polytope_rule(element, 2 * degree, tol=disc_mesh.tol)
        )
        rng = np.random.default_rng(19)
        c = rng.standard_normal(space_dimension(degree))
        exps = monomial_exponents(degree)

        def f(x, y):
            return sum(ci * x ** a * y ** b for ci, (a, b) in zip(c, exps))

        def grad_f(x, y):
            gx = sum(ci * a * x ** max(a - 1, 0) * y ** b
                     for ci, (a, b) in zip(c, exps) if a > 0)
            gy = sum(ci * b * x ** a * y ** max(b - 1, 0)
                     for ci, (a, b) in zip(c, exps) if b > 0)
            return gx, gy

        coeffs = l2_project(f, element, basis)
        pts = element.bbox[0] + rng.random((40, 2)) * (
            element.bbox[1] - element.bbox[0]
        )
        values, grads = eval_basis(basis, pts)
        gx, gy = grad_f(pts[:, 0], pts[:, 1])
        assert np.allclose(values @ coeffs, f(pts[:, 0], pts[:, 1]), atol=1e-11)
        assert np.allclose(grads[:, :, 0] @ coeffs, gx, atol=1e-10)
        assert np.allclose(grads[:, :, 1] @ coeffs, gy, atol=1e-10)


class TestInterpolateField:
    def test_scalar_constant_exact_with_zero_gradient(self, disc_mesh):
        spaces = build_spaces(disc_mesh, 2)
        coeffs = interpolate_field(lambda x, y: np.full_like(x, 2.75), disc_mesh, 2,
                                   spaces)
        seminorm_sq = 0.0
        value_err = 0.0
        for e, element in enumerate(disc_mesh.elements):
            rule = spaces.volume_rule(e)
            values, grads = eval_basis(spaces.bases_v[e], rule.points)
            local = coeffs[spaces.mv * e: spaces.mv * (e + 1)]
            value_err = max(value_err, np.max(np.abs(values @ local - 2.75)))
            gh = np.stack([grads[:, :, 0] @ local, grads[:, :, 1] @ local], axis=-1)
            seminorm_sq += float(np.dot(rule.weights, np.sum(gh ** 2, axis=1)))
        assert value_err < 1e-12
        assert seminorm_sq < 1e-12

    def test_vector_field_uses_velocity_layout(self, disc_mesh):
        spaces = build_spaces(disc_mesh, 1)
        coeffs = interpolate_field(
            lambda x, y: np.stack([x, -2.0 * np.ones_like(y)], axis=-1),
            disc_mesh, 1, spaces,
        )
        assert coeffs.shape == (2 * spaces.mv * disc_mesh.n_elements,)
        for e, element in enumerate(disc_mesh.elements[:5]):
            rule = spaces.volume_rule(e)
            values, _ = eval_basis(spaces.bases_v[e], rule.points)
            ux = values @ coeffs[2 * spaces.mv * e: 2 * spaces.mv * e + spaces.mv]
            uy = values @ coeffs[2 * spaces.mv * e + spaces.mv: 2 * spaces.mv * (e + 1)]
            assert np.allclose(ux, rule.points[:, 0], atol=1e-12)
            assert np.allclose(uy, -2.0, atol=1e-12)

    def test_velocity_interpolant_self_convergence(self):
        # Halving h must shrink the L2 interpolation error of a smooth field
        # by about 2^(p+1) = 8 for quadratic elements.
        problem = make_problem("square")
        errors = []
        for h in (2.0 ** -3, 2.0 ** -4):
            mesh = _square_mesh(h)
            spaces = build_spaces(mesh, 2)
            coeffs = interpolate_field(problem.velocity, mesh, 2, spaces)
            err_sq = 0.0
            for e, element in enumerate(mesh.elements):
                rule = spaces.volume_rule(e, 8)
                values, _ = eval_basis(spaces.bases_v[e], rule.points)
                exact = problem.velocity(rule.points[:, 0], rule.points[:, 1])
                m = spaces.mv
                ux = values @ coeffs[2 * m * e: 2 * m * e + m]
                uy = values @ coeffs[2 * m * e + m: 2 * m * (e + 1)]
                err_sq += float(np.dot(rule.weights,
                                       (ux - exact[:, 0]) ** 2
                                       + (uy - exact[:, 1]) ** 2))
            errors.append(np.sqrt(err_sq))
        ratio = errors[0] / errors[1]
        assert 8.0 * 0.75 <= ratio <= 8.0 * 1.25

    def test_pressure_interpolant_mean_vanishes(self):
        # The exact pressure has zero mean over the true disc; the mesh sees
        # a chord-resolved boundary, so the interpolant mean is geometry
        # error that must shrink like h^2 (measured 2.08e-6 -> 5.81e-7).
        problem = make_problem("disc")
        means = []
        for level in (1, 2):
            bg = build_background(problem.domain.bounding_box,
                                  DISC_H0 / 2 ** level)
            mesh = build_active_mesh(bg, problem.domain)
            spaces = build_spaces(mesh, 2)
            coeffs = interpolate_field(problem.pressure, mesh, 1, spaces)
            total = 0.0
            area = 0.0
            for e, element in enumerate(mesh.elements):
                rule = spaces.volume_rule(e, 2)
                values, _ = eval_basis(spaces.bases_p[e], rule.points)
                local = coeffs[spaces.mp * e: spaces.mp * (e + 1)]
                total += float(np.dot(rule.weights, values @ local))
                area += float(rule.weights.sum())
            means.append(abs(total / area))
        assert means[0] < 1e-5
        assert means[1] < means[0] / 3

    def test_interpolant_mean_exact_on_aligned_square(self):
        # On the grid-aligned unit square there is no geometry error and the
        # trig pressure's element means cancel by symmetry, so the mesh-wide
        # interpolant mean sits at machine zero.
        problem = make_problem("square")
        mesh = _square_mesh(2.0 ** -3)
        spaces = build_spaces(mesh, 2)
        coeffs = interpolate_field(problem.pressure, mesh, 1, spaces)
        total = 0.0
        for e in range(mesh.n_elements):
            rule = spaces.volume_rule(e, 2)
            values, _ = eval_basis(spaces.bases_p[e], rule.points)
            local = coeffs[spaces.mp * e: spaces.mp * (e + 1)]
            total += float(np.dot(rule.weights, values @ local))
        assert abs(total) < 1e-12


class TestDofMap:
    def test_block_sizes(self):
        dm = DofMap(n_elements=7, mv=6, mp=3)
        assert dm.n_velocity == 2 * 6 * 7
        assert dm.n_pressure == 3 * 7
        assert dm.multiplier == dm.n_velocity + dm.n_pressure
        assert dm.size == dm.n_velocity + dm.n_pressure + 1

    def test_velocity_blocks_tile_the_leading_range(self):
        dm = DofMap(n_elements=5, mv=3, mp=1)
        stacked = np.concatenate(
            [dm.velocity(e, c) for e in range(5) for c in (0, 1)]
        )
        assert np.array_equal(stacked, np.arange(dm.n_velocity))

    def test_pressure_blocks_follow_velocity(self):
        dm = DofMap(n_elements=5, mv=3, mp=1)
        stacked = np.concatenate([dm.pressure(e) for e in range(5)])
        assert np.array_equal(
            stacked, np.arange(dm.n_velocity, dm.n_velocity + dm.n_pressure)
        )
        assert dm.multiplier == dm.size - 1

    def test_matches_space_dimensions(self, disc_mesh):
        spaces = build_spaces(disc_mesh, 2)
        assert spaces.mv == space_dimension(2)
        assert spaces.mp == space_dimension(1)
        assert spaces.dofmap.n_elements == disc_mesh.n_elements
        assert spaces.dofmap.n_velocity == 2 * spaces.mv * disc_mesh.n_elements


class TestBuildSpaces:
    def test_rejects_degree_zero_velocity(self, disc_mesh):
        with pytest.raises(ValueError):
            build_spaces(disc_mesh, 0)

    def test_rejects_out_of_range_quadrature(self, disc_mesh):
        with pytest.raises(ValueError):
            build_spaces(disc_mesh, 1, quad_degree_volume=21)
        with pytest.raises(ValueError):
            build_spaces(disc_mesh, 1, quad_degree_facet=0)

    def test_full_triangles_share_coefficients(self, disc_mesh):
        spaces = build_spaces(disc_mesh, 2)
        classes = spaces.classes
        for label in (CLASS_LOWER, CLASS_UPPER):
            rep = classes.reps[label]
            for eid in classes.members[label]:
                assert spaces.bases_v[eid].coeffs is spaces.bases_v[rep].coeffs
                assert spaces.bases_p[eid].coeffs is spaces.bases_p[rep].coeffs

    def test_shared_coefficients_stay_orthonormal(self, disc_mesh):
        # Translation invariance of the shared coefficients, verified on a
        # non-representative member with its own quadrature rule.
        spaces = build_spaces(disc_mesh, 2)
        for label in (CLASS_LOWER, CLASS_UPPER):
            members = spaces.classes.members[label]
            assert len(members) >= 2
            eid = int(members[-1])
            rule = polytope_rule(disc_mesh.elements[eid], 8, tol=disc_mesh.tol)
            G = _gram(spaces.bases_v[eid], rule)
            assert np.max(np.abs(G - np.eye(spaces.mv))) < 1e-12

    def test_cut_elements_are_individual(self, disc_mesh):
        classes = classify_elements(disc_mesh)
        cut_ids = {e.id for e in disc_mesh.elements if e.is_cut}
        assert cut_ids <= set(classes.individual.tolist())
        for label in (CLASS_LOWER, CLASS_UPPER):
            parents = disc_mesh.element_parent[classes.members[label]]
            assert np.all(parents % 2 == label)
            assert np.all(np.diff(classes.members[label]) > 0)
        assert np.all(
            np.sort(np.concatenate(
                [classes.members[0], classes.members[1], classes.individual]
            )) == np.arange(disc_mesh.n_elements)
        )
        assert np.all(classes.labels[classes.individual] == CLASS_INDIVIDUAL)

    def test_require_rules_materializes_everything(self, disc_mesh):
        spaces = build_spaces(disc_mesh, 1)
        require_rules(spaces)
        assert len(spaces._volume_rules) == disc_mesh.n_elements
        assert len(spaces._facet_rules) == disc_mesh.n_facets

    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_basis_values_bounded_on_cut_elements(self, degree):
        # Orthonormal bases on badly cut slivers must stay numerically tame:
        # values scale like area^(-1/2) with a degree constant below 10^3.
        mesh = _disc_mesh(2)
        spaces = build_spaces(mesh, degree)
        for e, element in enumerate(mesh.elements):
            rule = spaces.volume_rule(e)
            values, _ = eval_basis(spaces.bases_v[e], rule.points)
            assert np.max(np.abs(values)) <= 1e3 * element.area ** -0.5
