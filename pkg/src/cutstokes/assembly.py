"""Assembly of the interior-penalty Stokes saddle system.

Velocity block: broken vector Laplacian with symmetric interior-penalty
coupling on interior facets and Nitsche terms on the boundary.  Divergence
block: element divergence integrals plus jump/boundary corrections.  The
discrete mean-pressure constraint is a single dense row/column appended by
the solver.

On the structured background all uncut triangles are translates of two
shapes, and every facet between two uncut triangles is a translate of one of
three interior (or four boundary) configurations, so their local blocks are
computed once and tiled.  Only elements and facets touching the boundary are
assembled one by one.  COO entries are emitted in a fixed phase order and
summed with a stable sort, which makes the assembled matrices bitwise
reproducible and the velocity block exactly symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import QuadratureMissing
from .fespace import (
    CLASS_INDIVIDUAL,
    CLASS_LOWER,
    CLASS_UPPER,
    DofMap,
    SpacePair,
    eval_basis,
)
from .mesh import ActiveMesh, FacetKind

# facet congruence classes on the structured grid, keyed by
# (class of side 0, local edge on side 0[, class of side 1, local edge on side 1])
INTERIOR_CLASS_KEYS = (
    (CLASS_LOWER, 2, CLASS_UPPER, 0),   # cell diagonal
    (CLASS_LOWER, 1, CLASS_UPPER, 2),   # vertical cell edge
    (CLASS_UPPER, 1, CLASS_LOWER, 0),   # horizontal cell edge
)
BOUNDARY_CLASS_KEYS = (
    (CLASS_LOWER, 0),   # bottom
    (CLASS_LOWER, 1),   # right
    (CLASS_UPPER, 1),   # top
    (CLASS_UPPER, 2),   # left
)


@dataclass
class PenaltyField:
    """Per-facet interior-penalty weight sigma = C * p^2 / h_F."""

    sigma_const: float
    degree: int
    values: np.ndarray


def penalty_field(mesh: ActiveMesh, spaces: SpacePair,
                  sigma_const: float = 4.0) -> PenaltyField:
    h_F = np.array([f.h_F for f in mesh.facets])
    p = spaces.velocity_degree
    return PenaltyField(sigma_const=float(sigma_const), degree=p,
                        values=sigma_const * p * p / h_F)


@dataclass(frozen=True)
class DissectionTree:
    """Post-order elimination tree over contiguous ranges of reordered dofs.

    Node ``i`` eliminates the half-open dof range ``[start[i], stop[i])`` of
    the reordered system and has ``n_children[i]`` child subtrees, which are
    the nearest preceding complete subtrees (postfix encoding).  Children
    cover the dofs ordered before their parent's range, so each subtree owns
    one contiguous block and couples only to ancestor ranges.
    """

    start: np.ndarray
    stop: np.ndarray
    n_children: np.ndarray


@dataclass
class SaddleSystem:
    """Assembled blocks of the constrained Stokes system."""

    A: sp.csr_matrix        # (n_u, n_u) velocity block
    B: sp.csr_matrix        # (n_p, n_u) divergence block
    m: np.ndarray           # (n_p,) mean-pressure constraint vector
    rhs_u: np.ndarray       # (n_u,) body-force load
    dofmap: DofMap
    # optional fill-reducing unknown order for direct factorization
    # (geometric nested dissection; multiplier last); None: solver default
    dof_order: np.ndarray | None = None
    # elimination tree matching dof_order, for the multifrontal factorization
    dissection: DissectionTree | None = None

    def full_matrix(self) -> sp.csc_matrix:
        """Bordered matrix [[A, B^T, 0], [B, 0, m], [0, m^T, 0]]."""
        m_col = sp.csc_matrix(self.m[:, None])
        return sp.bmat(
            [[self.A, self.B.T, None],
             [self.B, None, m_col],
             [None, m_col.T, None]],
            format="csc",
        )

    def full_rhs(self) -> np.ndarray:
        rhs = np.zeros(self.dofmap.size)
        rhs[: self.dofmap.n_velocity] = self.rhs_u
        return rhs


# --------------------------------------------------------------------------
# facet bookkeeping


@dataclass
class _FacetSoA:
    e0: np.ndarray
    e1: np.ndarray          # -1 on boundary facets
    le0: np.ndarray
    le1: np.ndarray
    interior: np.ndarray    # bool
    interior_groups: list[np.ndarray]
    interior_single: np.ndarray
    boundary_groups: list[np.ndarray]
    boundary_single: np.ndarray


def _facet_soa(spaces: SpacePair) -> _FacetSoA:
    soa = getattr(spaces, "_facet_soa_cache", None)
    if soa is not None:
        return soa
    mesh = spaces.mesh
    nf = mesh.n_facets
    e0 = np.empty(nf, dtype=np.int64)
    e1 = np.full(nf, -1, dtype=np.int64)
    le0 = np.empty(nf, dtype=np.int64)
    le1 = np.full(nf, -1, dtype=np.int64)
    interior = np.zeros(nf, dtype=bool)
    for f in mesh.facets:
        e0[f.id] = f.neighbors[0]
        le0[f.id] = f.local_edges[0]
        if f.kind is FacetKind.INTERIOR:
            interior[f.id] = True
            e1[f.id] = f.neighbors[1]
            le1[f.id] = f.local_edges[1]
    labels = spaces.classes.labels
    lab0 = labels[e0]
    lab1 = np.where(e1 >= 0, labels[np.maximum(e1, 0)], -1)

    interior_groups = []
    grouped = np.zeros(nf, dtype=bool)
    for c0, l0, c1, l1 in INTERIOR_CLASS_KEYS:
        mask = interior & (lab0 == c0) & (le0 == l0) & (lab1 == c1) & (le1 == l1)
        interior_groups.append(np.flatnonzero(mask))
        grouped |= mask
    interior_single = np.flatnonzero(interior & ~grouped)

    boundary_groups = []
    grouped = np.zeros(nf, dtype=bool)
    for c0, l0 in BOUNDARY_CLASS_KEYS:
        mask = ~interior & (lab0 == c0) & (le0 == l0)
        boundary_groups.append(np.flatnonzero(mask))
        grouped |= mask
    boundary_single = np.flatnonzero(~interior & ~grouped)

    soa = _FacetSoA(e0=e0, e1=e1, le0=le0, le1=le1, interior=interior,
                    interior_groups=interior_groups,
                    interior_single=interior_single,
                    boundary_groups=boundary_groups,
                    boundary_single=boundary_single)
    spaces._facet_soa_cache = soa
    return soa


def _check_class_penalty(penalty: PenaltyField, ids: np.ndarray) -> float:
    # members of one congruence class are translates up to roundoff in the
    # grid coordinates, so their penalties agree to a few ulps only
    sigma = penalty.values[ids]
    lo, hi = float(sigma.min()), float(sigma.max())
    if hi - lo > 1e-12 * hi:
        raise AssertionError("penalty varies within a facet congruence class")
    return float(sigma[0])


# --------------------------------------------------------------------------
# COO emission and deterministic conversion


def _emit(rows, cols, data, block, row_dofs, col_dofs):
    """One local block at explicit dof vectors."""
    nr, nc = block.shape
    rows.append(np.repeat(row_dofs, nc).astype(np.int32))
    cols.append(np.tile(col_dofs, nr).astype(np.int32))
    data.append(np.asarray(block, dtype=float).ravel())


def _emit_tiled(rows, cols, data, block, row_dofs, col_dofs):
    """The same local block at many dof vectors (row_dofs: (n, nr))."""
    n, nr = row_dofs.shape
    nc = col_dofs.shape[1]
    rows.append(np.broadcast_to(row_dofs[:, :, None], (n, nr, nc)).astype(np.int32).ravel())
    cols.append(np.broadcast_to(col_dofs[:, None, :], (n, nr, nc)).astype(np.int32).ravel())
    data.append(np.broadcast_to(block[None, :, :], (n, nr, nc)).ravel().astype(float))


def _coo_to_csr(rows, cols, data, shape) -> sp.csr_matrix:
    """COO triplets to CSR with insertion-order-stable duplicate summation."""
    if not rows:
        return sp.csr_matrix(shape)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    d = np.concatenate(data)
    order = np.lexsort((c, r))           # stable: ties keep emission order
    r, c, d = r[order], c[order], d[order]
    first = np.empty(len(r), dtype=bool)
    first[0] = True
    first[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
    starts = np.flatnonzero(first)
    sums = np.add.reduceat(d, starts)
    rr = r[starts].astype(np.int64)
    cc = c[starts]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(rr, minlength=shape[0]), out=indptr[1:])
    return sp.csr_matrix((sums, cc, indptr), shape=shape)


# --------------------------------------------------------------------------
# local block kernels


def _velocity_tables(spaces: SpacePair, eid: int, points: np.ndarray):
    return eval_basis(spaces.bases_v[eid], points)


def _sym(Z: np.ndarray) -> np.ndarray:
    """Mirror the upper triangle onto the lower one.

    X^T X products are symmetric only to rounding; mirroring makes local
    blocks bitwise symmetric so the assembled matrix satisfies A == A^T
    exactly (mirrored global entries then receive identical addend
    sequences).
    """
    return np.triu(Z) + np.triu(Z, 1).T


def _grad_coeff(spaces: SpacePair, eid: int):
    """Matrices of the element L2 projection of basis partial derivatives.

    Column i of the first (second) matrix holds the coefficients of the
    projection of d phi_i / dx (dy) in the element's own basis.
    """
    rule = spaces.volume_rule(eid)
    V, G = eval_basis(spaces.bases_v[eid], rule.points)
    wV = rule.weights[:, None] * V
    return wV.T @ G[:, :, 0], wV.T @ G[:, :, 1]


def _interior_velocity_block(spaces, fid, sigma, consistency, projected):
    """Local (2mv, 2mv) per-component block of the velocity form on one facet."""
    mesh = spaces.mesh
    f = mesh.facets[fid]
    rule = spaces.facet_rule(fid)
    w = rule.weights
    nx, ny = f.normal
    e0, e1 = f.neighbors
    T0, G0 = _velocity_tables(spaces, e0, rule.points)
    T1, G1 = _velocity_tables(spaces, e1, rule.points)
    J = np.hstack([T0, -T1])
    pen = _sym(sigma * (w[:, None] * J).T @ J)
    if not consistency:
        return pen
    if projected:
        gx0, gy0 = _grad_coeff(spaces, e0)
        gx1, gy1 = _grad_coeff(spaces, e1)
        N0 = T0 @ (gx0 * nx + gy0 * ny)
        N1 = T1 @ (gx1 * nx + gy1 * ny)
    else:
        N0 = G0[:, :, 0] * nx + G0[:, :, 1] * ny
        N1 = G1[:, :, 0] * nx + G1[:, :, 1] * ny
    Gn = 0.5 * np.hstack([N0, N1])
    M = (w[:, None] * Gn).T @ J
    return -(M + M.T) + pen


def _boundary_velocity_block(spaces, fid, sigma, consistency, projected):
    """Local (mv, mv) per-component block of the Nitsche boundary terms."""
    mesh = spaces.mesh
    f = mesh.facets[fid]
    rule = spaces.facet_rule(fid)
    w = rule.weights
    e0 = f.neighbors[0]
    T, G = _velocity_tables(spaces, e0, rule.points)
    pen = _sym(sigma * (w[:, None] * T).T @ T)
    if not consistency:
        return pen
    nrm = rule.normals
    if projected:
        gx, gy = _grad_coeff(spaces, e0)
        N = (T @ gx) * nrm[:, 0:1] + (T @ gy) * nrm[:, 1:2]
    else:
        N = G[:, :, 0] * nrm[:, 0:1] + G[:, :, 1] * nrm[:, 1:2]
    M = (w[:, None] * N).T @ T
    return -(M + M.T) + pen


def _stacked_vel_dofs(mv: int, e0s: np.ndarray, e1s: np.ndarray, comp: int):
    ar = np.arange(mv)
    d0 = (2 * mv * e0s + comp * mv)[:, None] + ar
    d1 = (2 * mv * e1s + comp * mv)[:, None] + ar
    return np.hstack([d0, d1])


# --------------------------------------------------------------------------
# public assembly


def _velocity_bilinear(mesh: ActiveMesh, spaces: SpacePair, penalty: PenaltyField,
                       consistency: bool, projected: bool) -> sp.csr_matrix:
    if len(penalty.values) != mesh.n_facets:
        raise QuadratureMissing(
            f"penalty field covers {len(penalty.values)} facets, "
            f"mesh has {mesh.n_facets}"
        )
    mv = spaces.mv
    n_u = spaces.dofmap.n_velocity
    soa = _facet_soa(spaces)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    ar = np.arange(mv)

    def emit_volume(S, ids):
        for comp in (0, 1):
            dofs = (2 * mv * ids + comp * mv)[:, None] + ar
            _emit_tiled(rows, cols, data, S, dofs, dofs)

    # volume: stiffness of each element
    for label in (CLASS_LOWER, CLASS_UPPER):
        rep = spaces.classes.reps[label]
        if rep is None:
            continue
        rule = spaces.volume_rule(rep)
        _, G = _velocity_tables(spaces, rep, rule.points)
        w = rule.weights[:, None]
        S = _sym((w * G[:, :, 0]).T @ G[:, :, 0]
                 + (w * G[:, :, 1]).T @ G[:, :, 1])
        emit_volume(S, spaces.classes.members[label])
    for eid in spaces.classes.individual:
        eid = int(eid)
        rule = spaces.volume_rule(eid)
        _, G = _velocity_tables(spaces, eid, rule.points)
        w = rule.weights[:, None]
        S = _sym((w * G[:, :, 0]).T @ G[:, :, 0]
                 + (w * G[:, :, 1]).T @ G[:, :, 1])
        emit_volume(S, np.array([eid]))

    # interior facets
    for group in soa.interior_groups:
        if len(group) == 0:
            continue
        fid = int(group[0])
        sigma = _check_class_penalty(penalty, group)
        block = _interior_velocity_block(spaces, fid, sigma, consistency, projected)
        e0s, e1s = soa.e0[group], soa.e1[group]
        for comp in (0, 1):
            dofs = _stacked_vel_dofs(mv, e0s, e1s, comp)
            _emit_tiled(rows, cols, data, block, dofs, dofs)
    for fid in soa.interior_single:
        fid = int(fid)
        block = _interior_velocity_block(spaces, fid, float(penalty.values[fid]),
                                         consistency, projected)
        e0, e1 = soa.e0[fid], soa.e1[fid]
        for comp in (0, 1):
            dofs = _stacked_vel_dofs(mv, np.array([e0]), np.array([e1]), comp)[0]
            _emit(rows, cols, data, block, dofs, dofs)

    # boundary facets
    for group in soa.boundary_groups:
        if len(group) == 0:
            continue
        fid = int(group[0])
        sigma = _check_class_penalty(penalty, group)
        block = _boundary_velocity_block(spaces, fid, sigma, consistency, projected)
        e0s = soa.e0[group]
        for comp in (0, 1):
            dofs = (2 * mv * e0s + comp * mv)[:, None] + ar
            _emit_tiled(rows, cols, data, block, dofs, dofs)
    for fid in soa.boundary_single:
        fid = int(fid)
        block = _boundary_velocity_block(spaces, fid, float(penalty.values[fid]),
                                         consistency, projected)
        e0 = soa.e0[fid]
        for comp in (0, 1):
            dofs = 2 * mv * e0 + comp * mv + ar
            _emit(rows, cols, data, block, dofs, dofs)

    return _coo_to_csr(rows, cols, data, (n_u, n_u))


def assemble_a(mesh: ActiveMesh, spaces: SpacePair, penalty: PenaltyField,
               projected_gradients: bool = False) -> sp.csr_matrix:
    """Velocity block of the saddle system (symmetric, n_u x n_u)."""
    return _velocity_bilinear(mesh, spaces, penalty, consistency=True,
                              projected=projected_gradients)


def assemble_vc_gram(mesh: ActiveMesh, spaces: SpacePair,
                     penalty: PenaltyField) -> sp.csr_matrix:
    """Gram matrix of the reduced velocity norm: broken gradient plus all
    penalty terms, without the gradient consistency couplings."""
    return _velocity_bilinear(mesh, spaces, penalty, consistency=False,
                              projected=False)


def assemble_b(mesh: ActiveMesh, spaces: SpacePair) -> sp.csr_matrix:
    """Divergence block (n_p x n_u): element integrals plus facet corrections."""
    mv, mp = spaces.mv, spaces.mp
    dm = spaces.dofmap
    soa = _facet_soa(spaces)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    arv = np.arange(mv)
    arp = np.arange(mp)

    def emit_volume(eid_rep, ids):
        rule = spaces.volume_rule(eid_rep)
        w = rule.weights[:, None]
        _, G = _velocity_tables(spaces, eid_rep, rule.points)
        P, _ = eval_basis(spaces.bases_p[eid_rep], rule.points)
        wP = (w * P).T
        rows_p = (mp * ids)[:, None] + arp
        for comp in (0, 1):
            block = -wP @ G[:, :, comp]
            cols_v = (2 * mv * ids + comp * mv)[:, None] + arv
            _emit_tiled(rows, cols, data, block, rows_p, cols_v)

    for label in (CLASS_LOWER, CLASS_UPPER):
        rep = spaces.classes.reps[label]
        if rep is not None:
            emit_volume(rep, spaces.classes.members[label])
    for eid in spaces.classes.individual:
        emit_volume(int(eid), np.array([int(eid)]))

    def interior_blocks(fid):
        f = spaces.mesh.facets[fid]
        rule = spaces.facet_rule(fid)
        w = rule.weights[:, None]
        e0, e1 = f.neighbors
        T0, _ = _velocity_tables(spaces, e0, rule.points)
        T1, _ = _velocity_tables(spaces, e1, rule.points)
        P0, _ = eval_basis(spaces.bases_p[e0], rule.points)
        P1, _ = eval_basis(spaces.bases_p[e1], rule.points)
        J = np.hstack([T0, -T1])
        Pavg = 0.5 * np.hstack([P0, P1])
        base = (w * Pavg).T @ J
        return f.normal[0] * base, f.normal[1] * base

    def stacked_pres_dofs(e0s, e1s):
        d0 = (mp * e0s)[:, None] + arp
        d1 = (mp * e1s)[:, None] + arp
        return np.hstack([d0, d1])

    for group in soa.interior_groups:
        if len(group) == 0:
            continue
        bx, by = interior_blocks(int(group[0]))
        e0s, e1s = soa.e0[group], soa.e1[group]
        rows_p = stacked_pres_dofs(e0s, e1s)
        for comp, block in ((0, bx), (1, by)):
            cols_v = _stacked_vel_dofs(mv, e0s, e1s, comp)
            _emit_tiled(rows, cols, data, block, rows_p, cols_v)
    for fid in soa.interior_single:
        fid = int(fid)
        bx, by = interior_blocks(fid)
        e0 = np.array([soa.e0[fid]])
        e1 = np.array([soa.e1[fid]])
        rows_p = stacked_pres_dofs(e0, e1)[0]
        for comp, block in ((0, bx), (1, by)):
            cols_v = _stacked_vel_dofs(mv, e0, e1, comp)[0]
            _emit(rows, cols, data, block, rows_p, cols_v)

    def boundary_blocks(fid):
        rule = spaces.facet_rule(fid)
        w = rule.weights[:, None]
        e0 = spaces.mesh.facets[fid].neighbors[0]
        T, _ = _velocity_tables(spaces, e0, rule.points)
        P, _ = eval_basis(spaces.bases_p[e0], rule.points)
        wP = (w * P).T
        return wP @ (T * rule.normals[:, 0:1]), wP @ (T * rule.normals[:, 1:2])

    for group in soa.boundary_groups:
        if len(group) == 0:
            continue
        bx, by = boundary_blocks(int(group[0]))
        e0s = soa.e0[group]
        rows_p = (mp * e0s)[:, None] + arp
        for comp, block in ((0, bx), (1, by)):
            cols_v = (2 * mv * e0s + comp * mv)[:, None] + arv
            _emit_tiled(rows, cols, data, block, rows_p, cols_v)
    for fid in soa.boundary_single:
        fid = int(fid)
        bx, by = boundary_blocks(fid)
        e0 = soa.e0[fid]
        rows_p = mp * e0 + arp
        for comp, block in ((0, bx), (1, by)):
            cols_v = 2 * mv * e0 + comp * mv + arv
            _emit(rows, cols, data, block, rows_p, cols_v)

    return _coo_to_csr(rows, cols, data, (dm.n_pressure, dm.n_velocity))


def assemble_rhs(mesh: ActiveMesh, spaces: SpacePair, f) -> np.ndarray:
    """Body-force load vector: per-element moments of ``f`` (vector field)."""
    mv = spaces.mv
    out = np.zeros(spaces.dofmap.n_velocity)
    ar = np.arange(mv)
    centers = np.array([b.center for b in spaces.bases_v])

    for label in (CLASS_LOWER, CLASS_UPPER):
        rep = spaces.classes.reps[label]
        if rep is None:
            continue
        ids = spaces.classes.members[label]
        rule = spaces.volume_rule(rep)
        V, _ = _velocity_tables(spaces, rep, rule.points)
        offsets = centers[ids] - centers[rep]
        pts = rule.points[None, :, :] + offsets[:, None, :]   # (n, q, 2)
        fv = np.asarray(f(pts[..., 0].ravel(), pts[..., 1].ravel()), dtype=float)
        fv = fv.reshape(len(ids), rule.n_points, 2)
        wV = rule.weights[:, None] * V
        for comp in (0, 1):
            vals = fv[..., comp] @ wV                          # (n, mv)
            out[(2 * mv * ids + comp * mv)[:, None] + ar] = vals
    for eid in spaces.classes.individual:
        eid = int(eid)
        rule = spaces.volume_rule(eid)
        V, _ = _velocity_tables(spaces, eid, rule.points)
        fv = np.asarray(f(rule.points[:, 0], rule.points[:, 1]), dtype=float)
        wV = rule.weights[:, None] * V
        for comp in (0, 1):
            out[2 * mv * eid + comp * mv + ar] = fv[:, comp] @ wV
    return out


def assemble_mean_vector(mesh: ActiveMesh, spaces: SpacePair) -> np.ndarray:
    """Moments of the constant 1 against the pressure basis, per element."""
    mp = spaces.mp
    out = np.zeros(spaces.dofmap.n_pressure)
    arp = np.arange(mp)
    for label in (CLASS_LOWER, CLASS_UPPER):
        rep = spaces.classes.reps[label]
        if rep is None:
            continue
        rule = spaces.volume_rule(rep)
        P, _ = eval_basis(spaces.bases_p[rep], rule.points)
        vals = rule.weights @ P
        ids = spaces.classes.members[label]
        out[(mp * ids)[:, None] + arp] = vals
    for eid in spaces.classes.individual:
        eid = int(eid)
        rule = spaces.volume_rule(eid)
        P, _ = eval_basis(spaces.bases_p[eid], rule.points)
        out[mp * eid + arp] = rule.weights @ P
    return out


_DISSECTION_LEAF = 16  # elements per undivided box of the elimination tree


def _nested_dissection_order(mesh: ActiveMesh) -> tuple[np.ndarray, list]:
    """Element order and elimination tree by recursive grid bisection.

    Elements connect only within a cell or across grid lines, so the
    elements of one cell row/column separate the two halves; ordering the
    halves first and the separator line last gives the classic low-fill
    elimination order on the structured background.  Returns the element
    emission order plus post-order tree nodes ``(start, stop, n_children)``
    in element units, each owning the contiguous emitted range it eliminates.
    """
    cell = mesh.element_parent // 2
    nx = max(mesh.background.nx, 1)
    cx = cell % nx
    cy = cell // nx
    order: list[np.ndarray] = []
    nodes: list[tuple[int, int, int]] = []
    pos = 0

    def emit(ids: np.ndarray, n_children: int) -> None:
        nonlocal pos
        order.append(ids)
        nodes.append((pos, pos + len(ids), n_children))
        pos += len(ids)

    def dissect(ids: np.ndarray) -> None:
        xs, ys = cx[ids], cy[ids]
        span_x = xs.max() - xs.min()
        span_y = ys.max() - ys.min()
        if len(ids) <= _DISSECTION_LEAF or (span_x == 0 and span_y == 0):
            emit(ids, 0)
            return
        c = xs if span_x >= span_y else ys
        mid = (int(c.min()) + int(c.max())) // 2
        children = 0
        for half in (ids[c < mid], ids[c > mid]):
            if len(half):
                dissect(half)
                children += 1
        emit(ids[c == mid], children)

    if mesh.n_elements:
        dissect(np.arange(mesh.n_elements))
    return (np.concatenate(order) if order else np.empty(0, dtype=int)), nodes


def _dof_order(mesh: ActiveMesh,
               dofmap: DofMap) -> tuple[np.ndarray, DissectionTree]:
    """Unknown order for factorization: per-element velocity and pressure
    blocks interleaved along the nested-dissection element order, with the
    mean-constraint multiplier (dense in pressures) last as the root.  The
    accompanying tree maps the element-level dissection to dof ranges."""
    elements, nodes = _nested_dissection_order(mesh)
    mv, mp = dofmap.mv, dofmap.mp
    per = 2 * mv + mp
    out = np.empty(dofmap.size, dtype=np.int64)
    block = np.empty((len(elements), per), dtype=np.int64)
    base_v = 2 * mv * elements
    block[:, : 2 * mv] = base_v[:, None] + np.arange(2 * mv)
    block[:, 2 * mv:] = (dofmap.n_velocity + mp * elements)[:, None] + np.arange(mp)
    out[:-1] = block.ravel()
    out[-1] = dofmap.multiplier

    raw = np.asarray(nodes if nodes else np.empty((0, 3)), dtype=np.int64)
    raw = raw.reshape(-1, 3)
    start = per * raw[:, 0]
    stop = per * raw[:, 1]
    kids = raw[:, 2].copy()
    if len(stop):
        stop[-1] += 1          # the root also eliminates the multiplier
    else:
        start = np.array([0], dtype=np.int64)
        stop = np.array([dofmap.size], dtype=np.int64)
        kids = np.array([0], dtype=np.int64)
    return out, DissectionTree(start=start, stop=stop, n_children=kids)


def assemble_system(mesh: ActiveMesh, spaces: SpacePair, penalty: PenaltyField,
                    f) -> SaddleSystem:
    """All blocks of the Stokes system for body force ``f``."""
    A = assemble_a(mesh, spaces, penalty)
    B = assemble_b(mesh, spaces)
    m = assemble_mean_vector(mesh, spaces)
    rhs_u = assemble_rhs(mesh, spaces, f)
    order, tree = _dof_order(mesh, spaces.dofmap)
    return SaddleSystem(A=A, B=B, m=m, rhs_u=rhs_u, dofmap=spaces.dofmap,
                        dof_order=order, dissection=tree)


def dump_system(system: SaddleSystem, path: str) -> None:
    """Write the bordered matrix (MatrixMarket) and rhs (plain text)."""
    from scipy.io import mmwrite

    mmwrite(path, system.full_matrix().tocoo())
    np.savetxt(f"{path}.rhs.txt", system.full_rhs(), fmt="%.17g")
