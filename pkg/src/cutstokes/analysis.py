"""Error norms, stability estimates, inverse-inequality audits, and studies.

Error integration is vectorized over the two uncut-triangle classes (one
basis-table evaluation per class, batched over all members) and falls back to
a plain loop on cut elements, so the finest meshes stay cheap.  Spectral
estimates (coercivity, inf-sup) use inverse power iteration with sparse LU
factorizations and deterministic seeded start vectors.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    PenaltyField,
    SaddleSystem,
    assemble_system,
    assemble_vc_gram,
    penalty_field,
)
from .errors import NonConvergence, NonHalvingSequence, SingularSystem
from .fespace import CLASS_LOWER, CLASS_UPPER, SpacePair, build_spaces, eval_basis
from .mesh import FacetKind, build_active_mesh, build_background
from .problems import ManufacturedProblem
from .quadrature import MAX_DEGREE
from .solver import SolutionFields, solve_stokes

_CHUNK = 16384          # elements per vectorized slab; bounds peak memory
_HALVING_TOL = 1e-12    # |h_i / h_{i+1} - 2| allowed in rate computation


# --------------------------------------------------------------------------
# error norms


def _velocity_coeff_view(velocity: np.ndarray, spaces: SpacePair) -> np.ndarray:
    return velocity.reshape(spaces.mesh.n_elements, 2, spaces.mv)


def _error_degree(spaces: SpacePair, degree: int | None) -> int:
    if degree is not None:
        return degree
    return min(2 * spaces.velocity_degree + 4, MAX_DEGREE)


def _class_batches(spaces: SpacePair, degree: int):
    """Yield (ids, points (n,q,2), weights (q,), V, G, P) per member slab."""
    centers = np.array([b.center for b in spaces.bases_v])
    for label in (CLASS_LOWER, CLASS_UPPER):
        rep = spaces.classes.reps[label]
        if rep is None:
            continue
        ids_all = spaces.classes.members[label]
        rule = spaces.volume_rule(rep, degree)
        V, G = eval_basis(spaces.bases_v[rep], rule.points)
        P, _ = eval_basis(spaces.bases_p[rep], rule.points)
        for k in range(0, len(ids_all), _CHUNK):
            ids = ids_all[k: k + _CHUNK]
            offsets = centers[ids] - centers[rep]
            pts = rule.points[None, :, :] + offsets[:, None, :]
            yield ids, pts, rule.weights, V, G, P


def h1_error(fields: SolutionFields, spaces: SpacePair,
             problem: ManufacturedProblem, degree: int | None = None) -> float:
    """Full broken H1-norm distance between the discrete and exact velocity."""
    degree = _error_degree(spaces, degree)
    U = _velocity_coeff_view(fields.velocity, spaces)
    total = 0.0

    def accumulate(ids, pts, w, V, G):
        cu = U[ids]                                        # (n, 2, mv)
        vals = np.einsum("nci,qi->nqc", cu, V)
        grads = np.einsum("nci,qid->nqcd", cu, G)
        x, y = pts[..., 0].ravel(), pts[..., 1].ravel()
        n, q = pts.shape[:2]
        ue = problem.velocity(x, y).reshape(n, q, 2)
        ge = problem.velocity_gradient(x, y).reshape(n, q, 2, 2)
        sq = ((vals - ue) ** 2).sum(axis=2) + ((grads - ge) ** 2).sum(axis=(2, 3))
        return float((sq @ w).sum())

    for ids, pts, w, V, G, _ in _class_batches(spaces, degree):
        total += accumulate(ids, pts, w, V, G)
    for eid in spaces.classes.individual:
        eid = int(eid)
        rule = spaces.volume_rule(eid, degree)
        V, G = eval_basis(spaces.bases_v[eid], rule.points)
        total += accumulate(np.array([eid]), rule.points[None], rule.weights, V, G)
    return float(np.sqrt(total))


def l2_pressure_error(fields: SolutionFields, spaces: SpacePair,
                      problem: ManufacturedProblem,
                      degree: int | None = None) -> float:
    """L2 distance between discrete and exact pressure, both mean-normalized.

    Means are taken over the quadrature representation of the active domain,
    which removes the arbitrary constant of either representative.
    """
    degree = _error_degree(spaces, degree)
    mesh = spaces.mesh
    Pc = fields.pressure.reshape(mesh.n_elements, spaces.mp)
    sw = se = se2 = 0.0

    def accumulate(ids, pts, w, P):
        nonlocal sw, se, se2
        vals = Pc[ids] @ P.T                               # (n, q)
        x, y = pts[..., 0].ravel(), pts[..., 1].ravel()
        err = vals - problem.pressure(x, y).reshape(vals.shape)
        sw += float(w.sum() * len(ids))
        se += float((err @ w).sum())
        se2 += float(((err ** 2) @ w).sum())

    for ids, pts, w, _, _, P in _class_batches(spaces, degree):
        accumulate(ids, pts, w, P)
    for eid in spaces.classes.individual:
        eid = int(eid)
        rule = spaces.volume_rule(eid, degree)
        P, _ = eval_basis(spaces.bases_p[eid], rule.points)
        accumulate(np.array([eid]), rule.points[None], rule.weights, P)
    # || e - mean(e) ||^2 = sum(w e^2) - (sum(w e))^2 / sum(w)
    return float(np.sqrt(max(se2 - se * se / sw, 0.0)))


def divergence_residual(fields: SolutionFields, system: SaddleSystem) -> float:
    """Max-norm residual of the discrete divergence constraint."""
    r = system.B @ fields.velocity + system.m * fields.multiplier
    return float(np.abs(r).max())


def pressure_mean(fields: SolutionFields, system: SaddleSystem) -> float:
    return float(system.m @ fields.pressure)


# --------------------------------------------------------------------------
# energy norms


def energy_norm_velocity(velocity: np.ndarray, spaces: SpacePair,
                         penalty: PenaltyField) -> dict[str, float]:
    """Terms of the velocity energy norm (squares) and the total norm.

    grad: broken gradient over the active domain; bnd_penalty: weighted
    boundary trace; bnd_normal: boundary normal-derivative with h/p^2 weight;
    jump_penalty: interior jumps; elem_normal: half-weighted element-boundary
    normal-derivative sum, taken over active elements.
    """
    mesh = spaces.mesh
    p = spaces.velocity_degree
    U = _velocity_coeff_view(velocity, spaces)
    terms = {k: 0.0 for k in ("grad", "bnd_penalty", "bnd_normal",
                              "jump_penalty", "elem_normal")}

    for e in range(mesh.n_elements):
        rule = spaces.volume_rule(e)
        _, G = eval_basis(spaces.bases_v[e], rule.points)
        gh = np.einsum("ci,qid->qcd", U[e], G)
        terms["grad"] += float((rule.weights * (gh ** 2).sum(axis=(1, 2))).sum())

    for f in mesh.facets:
        rule = spaces.facet_rule(f.id)
        w = rule.weights
        sigma = penalty.values[f.id]
        e0 = f.neighbors[0]
        V0, G0 = eval_basis(spaces.bases_v[e0], rule.points)
        if f.kind is FacetKind.BOUNDARY:
            vals = np.einsum("ci,qi->qc", U[e0], V0)
            terms["bnd_penalty"] += float(sigma * (w * (vals ** 2).sum(axis=1)).sum())
            gn = np.einsum("ci,qid,qd->qc", U[e0], G0, rule.normals)
            terms["bnd_normal"] += float(
                f.h_F / p ** 2 * (w * (gn ** 2).sum(axis=1)).sum()
            )
        else:
            e1 = f.neighbors[1]
            V1, _ = eval_basis(spaces.bases_v[e1], rule.points)
            jump = np.einsum("ci,qi->qc", U[e0], V0) - np.einsum(
                "ci,qi->qc", U[e1], V1)
            terms["jump_penalty"] += float(sigma * (w * (jump ** 2).sum(axis=1)).sum())

    for e, element in enumerate(mesh.elements):
        for fid in element.facets:
            rule = spaces.facet_rule(fid)
            nrm = rule.normals  # sign is irrelevant in the squared term
            _, G = eval_basis(spaces.bases_v[e], rule.points)
            gn = np.einsum("ci,qid,qd->qc", U[e], G, nrm)
            terms["elem_normal"] += 0.5 * float(
                element.h_K / p ** 2 * (rule.weights * (gn ** 2).sum(axis=1)).sum()
            )

    terms["total"] = float(np.sqrt(sum(terms.values())))
    return terms


def energy_norm_pressure(pressure: np.ndarray, spaces: SpacePair) -> dict[str, float]:
    """Terms of the pressure energy norm (squares) and the total norm.

    Trace terms carry the h/p^2 weight of the velocity degree p.
    """
    mesh = spaces.mesh
    p = spaces.velocity_degree
    Pc = pressure.reshape(mesh.n_elements, spaces.mp)
    terms = {k: 0.0 for k in ("l2", "bnd", "jump", "elem_bnd")}

    terms["l2"] = float((Pc ** 2).sum())   # orthonormal basis: mass is identity

    for f in mesh.facets:
        rule = spaces.facet_rule(f.id)
        w = rule.weights
        weight = f.h_F / p ** 2
        e0 = f.neighbors[0]
        P0, _ = eval_basis(spaces.bases_p[e0], rule.points)
        v0 = P0 @ Pc[e0]
        if f.kind is FacetKind.BOUNDARY:
            terms["bnd"] += float(weight * (w * v0 ** 2).sum())
        else:
            P1, _ = eval_basis(spaces.bases_p[f.neighbors[1]], rule.points)
            jump = v0 - P1 @ Pc[f.neighbors[1]]
            terms["jump"] += float(weight * (w * jump ** 2).sum())

    for e, element in enumerate(mesh.elements):
        for fid in element.facets:
            rule = spaces.facet_rule(fid)
            P, _ = eval_basis(spaces.bases_p[e], rule.points)
            vals = P @ Pc[e]
            terms["elem_bnd"] += 0.5 * float(
                element.h_K / p ** 2 * (rule.weights * vals ** 2).sum()
            )

    terms["total"] = float(np.sqrt(sum(terms.values())))
    return terms


def energy_norms(velocity: np.ndarray, pressure: np.ndarray, spaces: SpacePair,
                 penalty: PenaltyField) -> tuple[float, float]:
    """Total velocity and pressure energy norms of coefficient vectors."""
    ev = energy_norm_velocity(velocity, spaces, penalty)
    ep = energy_norm_pressure(pressure, spaces)
    return ev["total"], ep["total"]


# --------------------------------------------------------------------------
# stability estimates


def _velocity_block(system) -> sp.csc_matrix:
    A = system.A if hasattr(system, "A") else system
    return sp.csc_matrix(A)


def _gershgorin_lower(A: sp.csc_matrix) -> float:
    d = A.diagonal()
    abs_row = np.asarray(abs(A).sum(axis=1)).ravel()
    return float((d - (abs_row - np.abs(d))).min())


def coercivity_estimate(system, *, seed: int = 0, tol: float = 1e-6,
                        max_iterations: int = 500) -> float:
    """Smallest (algebraic) eigenvalue of the velocity block A.

    Shift-and-invert inverse power iteration with a deterministic seeded
    start vector: a Gershgorin bound places the shift below the whole
    spectrum, making the bottom eigenvalue the one nearest the shift; the
    iteration is Lanczos-accelerated so clustered bottom eigenvalues still
    separate.  A positive return certifies discrete coercivity for this
    mesh and penalty.
    """
    A = _velocity_block(system)
    n = A.shape[0]
    if n <= 4:  # too small for a Krylov subspace; solve densely
        return float(sla.eigvalsh(A.toarray())[0])
    scale = float(np.abs(A.diagonal()).max()) or 1.0
    shift = _gershgorin_lower(A) - 1e-3 * scale
    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    try:
        vals = spla.eigsh(A, k=1, sigma=shift, which="LM", v0=v0,
                          maxiter=max_iterations, tol=tol,
                          return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NonConvergence(
            f"coercivity estimate did not settle in {max_iterations} iterations"
        ) from exc
    except RuntimeError as exc:
        raise SingularSystem(f"shifted factorization failed: {exc}") from exc
    return float(vals[0])


def infsup_estimate(system: SaddleSystem, N_u, N_p=None, *, seed: int = 0,
                    tol: float = 1e-5, max_iterations: int = 500) -> float:
    """Discrete inf-sup constant of the divergence form.

    beta^2 is the smallest nonzero eigenvalue of B N_u^{-1} B^T q = beta^2
    N_p q on the mean-free pressure subspace (N_p defaults to the identity:
    the pressure basis is orthonormal, so the L2 Gram is the identity).
    Each inverse-power step applies the pseudo-inverse of the Schur
    complement through one bordered solve, deflating the constant-pressure
    kernel direction m.
    """
    m = system.m
    if system.B.nnz == 0:
        return 0.0
    K = SaddleSystem(A=N_u.tocsr(), B=system.B, m=m,
                     rhs_u=np.zeros(system.dofmap.n_velocity),
                     dofmap=system.dofmap).full_matrix()
    try:
        lu = spla.splu(K)
    except Exception as exc:
        raise SingularSystem(f"inf-sup bordered factorization failed: {exc}") from exc

    def apply_np(q):
        return q if N_p is None else N_p @ q

    m_np = float(m @ apply_np(m))
    n_u = system.dofmap.n_velocity
    n_p = system.dofmap.n_pressure
    rhs = np.zeros(K.shape[0])

    def deflate(q):
        return q - m * (float(m @ apply_np(q)) / m_np)

    def schur_pinv(y):
        rhs[n_u: n_u + n_p] = -apply_np(deflate(y))
        q = lu.solve(rhs)[n_u: n_u + n_p]
        return deflate(q)

    op = spla.LinearOperator((n_p, n_p), matvec=schur_pinv, dtype=float)
    rng = np.random.default_rng(seed)
    v0 = deflate(rng.standard_normal(n_p))
    try:
        # largest eigenvalue of the deflated Schur pseudo-inverse = 1 / beta^2
        vals = spla.eigsh(op, k=1, which="LA", v0=v0,
                          maxiter=max_iterations, tol=tol,
                          return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise NonConvergence(
            f"inf-sup estimate did not settle in {max_iterations} iterations"
        ) from exc
    lam = float(vals[0])
    if lam <= 0:
        raise NonConvergence("inf-sup iteration produced a nonpositive estimate")
    return float(1.0 / np.sqrt(lam))


# --------------------------------------------------------------------------
# quadrature and inverse-inequality audits


def quadrature_audit(spaces: SpacePair, *, seed: int = 0) -> dict[str, float]:
    """Divergence-theorem residual of the volume/facet rules, per element.

    For a random polynomial vector field q of the velocity degree,
    int_K div q dx must equal the boundary integral of q . n over the
    element's boundary.  The volume rule of a curved element integrates over
    the chord-refined effective polygon, so the flux along a curved facet is
    taken over the same polyline with per-chord normals (the assembly rule's
    level-set normals describe the true boundary, not the polygon, and would
    add geometric consistency error to a pure quadrature check).  Volume fans
    and facet polylines share their boundary refinement, so the residual is
    at rounding level.  Returns the worst absolute residual and the field
    scale it should be compared against.
    """
    from .fespace import monomial_exponents
    from .quadrature import refine_boundary_polyline, segment_rule

    mesh = spaces.mesh
    p = spaces.velocity_degree
    exps = monomial_exponents(p)
    rng = np.random.default_rng(seed)
    coeff = rng.standard_normal((2, len(exps)))

    def q_vals(pts):
        xp = pts[:, 0][:, None] ** exps[:, 0]
        yp = pts[:, 1][:, None] ** exps[:, 1]
        return (xp * yp) @ coeff.T                          # (n, 2)

    def div_vals(pts):
        a, b = exps[:, 0], exps[:, 1]
        xa = np.where(a > 0, pts[:, 0][:, None] ** np.maximum(a - 1, 0), 0.0)
        yb = np.where(b > 0, pts[:, 1][:, None] ** np.maximum(b - 1, 0), 0.0)
        dx = (a * xa * pts[:, 1][:, None] ** b) @ coeff[0]
        dy = (b * (pts[:, 0][:, None] ** a) * yb) @ coeff[1]
        return dx + dy

    worst = 0.0
    scale = 0.0
    for e, element in enumerate(mesh.elements):
        vol_rule = spaces.volume_rule(e)
        vol = float(vol_rule.weights @ div_vals(vol_rule.points))
        bnd = 0.0
        for fid in element.facets:
            f = mesh.facets[fid]
            sign = 1.0 if f.neighbors[0] == e else -1.0
            if f.curved:
                polyline = refine_boundary_polyline(
                    f.endpoints[0], f.endpoints[1], mesh.domain,
                    spaces.n_sub, tol=mesh.tol)
                pieces = zip(polyline[:-1], polyline[1:])
            else:
                pieces = [(f.endpoints[0], f.endpoints[1])]
            for a, b in pieces:
                rule = segment_rule(a, b, spaces.facet_degree)
                tangent = b - a
                normal = np.array([tangent[1], -tangent[0]])
                normal /= np.linalg.norm(normal)
                flux = q_vals(rule.points) @ normal
                bnd += sign * float(rule.weights @ flux)
        worst = max(worst, abs(vol - bnd))
        scale = max(scale, abs(vol), abs(bnd))
    return {"worst_residual": worst, "scale": max(scale, 1.0)}


def trace_constant_audit(spaces: SpacePair) -> dict[str, float]:
    """Sharp facet-trace constants against the fan-apex bound.

    For each boundary facet piece F of the mesh, the exact constant
    sup ||v||_F^2 / ||v||_K^2 over degree-p polynomials (a small generalized
    eigenproblem between facet and fan-triangle mass matrices) is compared
    with (p+1)(p+2) / min_F (x - apex) . n.  Returns the worst observed
    ratio (1 means the bound is attained; above 1 means violated) and the
    largest bound encountered.
    """
    from .quadrature import (
        _polygon_centroid,
        effective_polygon,
        refine_boundary_polyline,
        segment_rule,
        triangle_rule,
    )

    mesh = spaces.mesh
    p = spaces.velocity_degree
    worst = 0.0
    largest_bound = 0.0
    for f in mesh.facets:
        if f.kind is not FacetKind.BOUNDARY:
            continue
        element = mesh.elements[f.neighbors[0]]
        basis = spaces.bases_v[f.neighbors[0]]
        poly = effective_polygon(element, spaces.n_sub, tol=mesh.tol)
        apex = _polygon_centroid(poly)
        if f.curved:
            polyline = refine_boundary_polyline(f.endpoints[0], f.endpoints[1],
                                                mesh.domain, spaces.n_sub,
                                                tol=mesh.tol)
            pieces = [(polyline[k], polyline[k + 1])
                      for k in range(len(polyline) - 1)]
        else:
            pieces = [(f.endpoints[0], f.endpoints[1])]
        for a, b in pieces:
            seg = segment_rule(a, b, 2 * p + 2)
            Vf, _ = eval_basis(basis, seg.points)
            Mf = (seg.weights[:, None] * Vf).T @ Vf
            tri = np.array([apex, a, b])
            vrule = triangle_rule(max(1, 2 * p), tri)
            Vk, _ = eval_basis(basis, vrule.points)
            Mk = (vrule.weights[:, None] * Vk).T @ Vk
            lam = float(sla.eigh(Mf, Mk, eigvals_only=True)[-1])
            tangent = b - a
            nrm = np.array([tangent[1], -tangent[0]])
            nrm /= np.linalg.norm(nrm)
            dist = min(float((a - apex) @ nrm), float((b - apex) @ nrm))
            if dist <= 0:
                continue
            bound = (p + 1) * (p + 2) / dist
            worst = max(worst, lam / bound)
            largest_bound = max(largest_bound, bound)
    return {"worst_ratio": worst, "largest_bound": largest_bound}


def h1_l2_inverse_audit(spaces: SpacePair) -> dict[str, float]:
    """Empirical constant C in ||grad v||_K <= C p^2 / h_K ||v||_K.

    The sharp per-element factor is the top eigenvalue of the gradient Gram
    in the orthonormal basis; reported is the worst C over all elements.
    """
    mesh = spaces.mesh
    p = spaces.velocity_degree
    worst = 0.0
    seen: set[int] = set()
    for e in range(mesh.n_elements):
        label = int(spaces.classes.labels[e])
        if label != 2:
            if label in seen:
                continue          # congruent elements share the constant
            seen.add(label)
        rule = spaces.volume_rule(e)
        _, G = eval_basis(spaces.bases_v[e], rule.points)
        w = rule.weights[:, None]
        S = (w * G[:, :, 0]).T @ G[:, :, 0] + (w * G[:, :, 1]).T @ G[:, :, 1]
        lam = float(sla.eigh(S, eigvals_only=True)[-1])
        worst = max(worst, float(np.sqrt(lam)) * mesh.elements[e].h_K / p ** 2)
    return {"worst_constant": worst}


def norm_equivalence_check(spaces: SpacePair, penalty: PenaltyField, N_u, *,
                           samples: int = 100, seed: int = 0) -> float:
    """Empirical constant C with |||v||| <= C |||v|||_{V^c} over random v."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    n_u = spaces.dofmap.n_velocity
    for _ in range(samples):
        v = rng.standard_normal(n_u)
        full = energy_norm_velocity(v, spaces, penalty)["total"]
        reduced = float(np.sqrt(v @ (N_u @ v)))
        if reduced > 0:
            worst = max(worst, full / reduced)
    return worst


# --------------------------------------------------------------------------
# convergence studies


@dataclass
class ErrorReport:
    """Errors of one solve: mesh size, velocity H1, pressure L2, sizes."""

    h_max: float
    vel_h1: float
    pres_l2: float
    energy_u: float | None = None
    energy_p: float | None = None
    dofs: int = 0


@dataclass
class ConvergenceTable:
    """Error rows with per-column log2 rates and their arithmetic means."""

    rows: list[ErrorReport]
    rates: dict[str, np.ndarray]
    means: dict[str, float]


@dataclass
class LevelResult:
    """Per-level bookkeeping of a study, beyond the error report."""

    report: ErrorReport
    n_elements: int
    residual: float
    divergence: float
    pressure_mean: float
    seconds: float


def convergence_rates(rows: list[ErrorReport]) -> ConvergenceTable:
    """Successive log2 error ratios between halved mesh levels.

    rate_i (stored at the finer row) is log2(e_{i-1} / e_i); the coarsest
    entry is NaN.  Raises NonHalvingSequence when consecutive h_max do not
    halve to within 1e-12 on the ratio.
    """
    h = np.array([r.h_max for r in rows], dtype=float)
    rates: dict[str, np.ndarray] = {}
    for name in ("vel_h1", "pres_l2"):
        e = np.array([getattr(r, name) for r in rows], dtype=float)
        col = np.full(len(rows), np.nan)
        for i in range(1, len(rows)):
            ratio = h[i - 1] / h[i]
            if abs(ratio - 2.0) > _HALVING_TOL:
                raise NonHalvingSequence(
                    f"mesh sizes {h[i - 1]!r} -> {h[i]!r} do not halve "
                    f"(ratio {ratio!r})"
                )
            col[i] = np.log2(e[i - 1] / e[i])
        rates[name] = col
    means = {name: (float(np.nanmean(col)) if len(rows) > 1 else float("nan"))
             for name, col in rates.items()}
    return ConvergenceTable(rows=list(rows), rates=rates, means=means)


def solve_level(problem: ManufacturedProblem, h: float, order: int, *,
                sigma_const: float = 4.0,
                quad_degree_volume: int | None = None,
                quad_degree_facet: int | None = None,
                curved_subdivisions: int | None = None,
                with_energy: bool = False,
                check_conditioning: bool = False):
    """Build, assemble, and solve one mesh level.

    Returns (LevelResult, fields, spaces, system, penalty).
    """
    t0 = time.perf_counter()
    background = build_background(problem.domain.bounding_box, h)
    mesh = build_active_mesh(background, problem.domain)
    spaces = build_spaces(mesh, order,
                          quad_degree_volume=quad_degree_volume,
                          quad_degree_facet=quad_degree_facet,
                          curved_subdivisions=curved_subdivisions)
    penalty = penalty_field(mesh, spaces, sigma_const)
    system = assemble_system(mesh, spaces, penalty, problem.body_force)
    fields = solve_stokes(system, check_conditioning=check_conditioning)
    report = ErrorReport(
        h_max=float(background.h),
        vel_h1=h1_error(fields, spaces, problem),
        pres_l2=l2_pressure_error(fields, spaces, problem),
        dofs=system.dofmap.size,
    )
    if with_energy:
        from .fespace import interpolate_field

        ui = interpolate_field(problem.velocity, mesh, order, spaces)
        pi = interpolate_field(problem.pressure, mesh, order - 1, spaces)
        report.energy_u, report.energy_p = energy_norms(
            fields.velocity - ui, fields.pressure - pi, spaces, penalty)
    result = LevelResult(
        report=report,
        n_elements=mesh.n_elements,
        residual=fields.residual_norm,
        divergence=divergence_residual(fields, system),
        pressure_mean=pressure_mean(fields, system),
        seconds=time.perf_counter() - t0,
    )
    return result, fields, spaces, system, penalty


def run_convergence_study(problem: ManufacturedProblem, order: int,
                          levels: int, h0: float, *,
                          sigma_const: float = 4.0,
                          quad_degree_volume: int | None = None,
                          quad_degree_facet: int | None = None,
                          curved_subdivisions: int | None = None,
                          progress=None):
    """Solve ``levels`` meshes with h0, h0/2, ...; tabulate errors and rates.

    Returns (ConvergenceTable, list[LevelResult]).
    """
    details: list[LevelResult] = []
    for i in range(levels):
        result, *_ = solve_level(
            problem, h0 / 2 ** i, order,
            sigma_const=sigma_const,
            quad_degree_volume=quad_degree_volume,
            quad_degree_facet=quad_degree_facet,
            curved_subdivisions=curved_subdivisions,
        )
        details.append(result)
        if progress is not None:
            progress(result)
    table = convergence_rates([r.report for r in details])
    return table, details
