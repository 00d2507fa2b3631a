"""Direct solution of the bordered Stokes saddle system.

The system is factored once and the solution is polished with a few steps of
iterative refinement.  The main factorization is a multifrontal block-LDL^T
along the geometric nested-dissection tree built at assembly time: each tree
node gathers its frontal matrix, eliminates its own dof range with a dense
Bunch-Kaufman factorization (pivoting suited to symmetric indefinite blocks),
and passes the Schur update to its parent.  Only the lower-triangular data of
the factorization is kept, which roughly halves the memory of a general
sparse LU on these meshes.  SuperLU is the fallback when no dissection tree
is available or the tree factorization breaks down.  Everything is
sequential and input-ordered, so repeated solves of the same system give
bitwise-identical results.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .assembly import DissectionTree, SaddleSystem
from .errors import IllConditionedWarning, SingularSystem

RESIDUAL_TARGET = 1e-9
MAX_REFINE_STEPS = 3
CONDITION_LIMIT = 1e14

# SuperLU fallbacks: near-symmetric ordering first, partial pivoting second
_FAST = dict(permc_spec="MMD_AT_PLUS_A",
             options={"SymmetricMode": True, "DiagPivotThresh": 1e-3})
_SAFE = dict(permc_spec="COLAMD", options={"DiagPivotThresh": 1.0})


@dataclass
class SolutionFields:
    """Solution coefficient blocks plus the achieved relative residual."""

    velocity: np.ndarray
    pressure: np.ndarray
    multiplier: float
    residual_norm: float


class DissectionFactor:
    """Multifrontal block-LDL^T of a symmetric matrix over a dissection tree.

    ``tree`` describes contiguous elimination ranges of the permuted matrix
    in post-order (children before parents).  Node fronts couple only to
    ancestor ranges, so each front is assembled from the matrix rows of its
    own range plus the children's Schur updates, partially factored with
    ``dsytrf`` (Bunch-Kaufman pivoting), and reduced to an update for the
    parent.  ``solve`` applies the factorization to right-hand sides in the
    original (unpermuted) ordering.
    """

    def __init__(self, K: sp.spmatrix, perm: np.ndarray,
                 tree: DissectionTree) -> None:
        perm = np.asarray(perm, dtype=np.int64)
        n = K.shape[0]
        if perm.size != n or len(tree.start) == 0 or tree.stop[-1] != n:
            raise SingularSystem("elimination tree does not match the system")
        self._perm = perm
        self._inv = np.empty_like(perm)
        self._inv[perm] = np.arange(n, dtype=np.int64)
        Kp = K.tocsr()[perm][:, perm].tocsr()
        Kp.sort_indices()
        self._blocks: list[tuple[int, int, np.ndarray, np.ndarray,
                                 np.ndarray, np.ndarray]] = []
        self._factorize(Kp, tree)

    def _factorize(self, Kp: sp.csr_matrix, tree: DissectionTree) -> None:
        indptr, indices, data = Kp.indptr, Kp.indices, Kp.data
        no_ids = np.empty(0, dtype=indices.dtype)
        updates: list[tuple[np.ndarray, np.ndarray]] = []
        for e0, e1, n_children in zip(tree.start, tree.stop, tree.n_children):
            e0, e1 = int(e0), int(e1)
            n_own = e1 - e0
            children = [updates.pop() for _ in range(int(n_children))]

            lo, hi = indptr[e0], indptr[e1]
            cols = indices[lo:hi]
            parts = [cols[cols >= e1]]
            parts += [ids[ids >= e1] for ids, _ in children]
            bnd = np.unique(np.concatenate(parts)) if parts else no_ids
            n_bnd = bnd.size

            front = np.zeros((n_own + n_bnd, n_own + n_bnd))
            if n_own:
                rows = np.repeat(np.arange(n_own),
                                 np.diff(indptr[e0:e1 + 1]))
                keep = cols >= e0
                r = rows[keep]
                c = cols[keep]
                v = data[lo:hi][keep]
                lc = np.empty(c.size, dtype=np.int64)
                in_own = c < e1
                lc[in_own] = c[in_own] - e0
                lc[~in_own] = n_own + np.searchsorted(bnd, c[~in_own])
                front[r, lc] = v
                front[lc, r] = v
            for ids, update in children:
                if ids.size == 0:
                    continue
                pos = np.empty(ids.size, dtype=np.int64)
                in_own = ids < e1
                pos[in_own] = ids[in_own] - e0
                pos[~in_own] = n_own + np.searchsorted(bnd, ids[~in_own])
                front[np.ix_(pos, pos)] += update
            del children

            if n_own:
                lwork, _ = lapack.dsytrf_lwork(n_own, lower=1)
                ldl, ipiv, info = lapack.dsytrf(front[:n_own, :n_own],
                                                lower=1, lwork=int(lwork))
                if info != 0:
                    raise SingularSystem(
                        f"symmetric factorization broke down (info={info})")
                if n_bnd:
                    coupling, info = lapack.dsytrs(ldl, ipiv,
                                                   front[:n_own, n_own:],
                                                   lower=1)
                    if info != 0:
                        raise SingularSystem(
                            f"frontal solve failed (info={info})")
                    update = front[n_own:, n_own:] \
                        - front[n_own:, :n_own] @ coupling
                else:
                    coupling = np.zeros((n_own, 0))
                    update = front[n_own:, n_own:]
            else:
                ldl = np.zeros((0, 0))
                ipiv = np.zeros(0, dtype=np.int32)
                coupling = np.zeros((0, n_bnd))
                update = front
            self._blocks.append((e0, e1, bnd, ldl, ipiv, coupling))
            updates.append((bnd, update))
        if len(updates) != 1 or updates[0][0].size != 0:
            raise SingularSystem("elimination tree left unresolved coupling")

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Apply the factorization; 1D input and output, original order."""
        y = np.asarray(b, dtype=float)[self._perm]
        for e0, e1, bnd, _, _, coupling in self._blocks:
            if e1 > e0 and bnd.size:
                y[bnd] -= coupling.T @ y[e0:e1]
        for e0, e1, bnd, ldl, ipiv, coupling in reversed(self._blocks):
            if e1 == e0:
                continue
            seg, _ = lapack.dsytrs(ldl, ipiv, y[e0:e1, None], lower=1)
            seg = seg[:, 0]
            if bnd.size:
                seg -= coupling @ y[bnd]
            y[e0:e1] = seg
        return y[self._inv]


def _refine(solve, K, rhs: np.ndarray, rhs_norm: float):
    x = solve(rhs)
    if not np.all(np.isfinite(x)):
        return x, np.inf
    rel = np.inf
    for _ in range(MAX_REFINE_STEPS + 1):
        r = rhs - K @ x
        rel = float(np.linalg.norm(r) / rhs_norm)
        if rel <= RESIDUAL_TARGET:
            break
        dx = solve(r)
        if not np.all(np.isfinite(dx)):
            break
        x = x + dx
    return x, rel


def _factor_attempts(system: SaddleSystem, K):
    if system.dof_order is not None and system.dissection is not None:
        yield lambda: DissectionFactor(K, system.dof_order, system.dissection)
    for params in (_FAST, _SAFE):
        yield lambda params=params: spla.splu(K, **params).solve


def solve_stokes(system: SaddleSystem, *,
                 check_conditioning: bool = False) -> SolutionFields:
    """Solve the bordered system; refine to a 1e-9 relative residual.

    Raises SingularSystem when the factorization fails or refinement cannot
    reach the target.  With ``check_conditioning`` a one-norm condition
    estimate above 1e14 emits IllConditionedWarning.
    """
    K = system.full_matrix()
    rhs = system.full_rhs()
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        n = system.dofmap
        return SolutionFields(velocity=np.zeros(n.n_velocity),
                              pressure=np.zeros(n.n_pressure),
                              multiplier=0.0, residual_norm=0.0)

    solve = None
    x, rel = None, np.inf
    failure = ""
    for make_factor in _factor_attempts(system, K):
        try:
            factor = make_factor()
            solve = factor.solve if hasattr(factor, "solve") else factor
        except Exception as exc:
            failure = str(exc)
            continue
        x, rel = _refine(solve, K, rhs, rhs_norm)
        if rel <= RESIDUAL_TARGET:
            break
    if x is None:
        raise SingularSystem(f"sparse factorization failed: {failure}")
    if rel > RESIDUAL_TARGET:
        raise SingularSystem(
            f"iterative refinement stalled at relative residual {rel:.3e} "
            f"(target {RESIDUAL_TARGET:g})"
        )

    if check_conditioning:
        op = spla.LinearOperator(K.shape, matvec=solve, rmatvec=solve)
        kappa = spla.onenormest(K) * spla.onenormest(op)
        if kappa > CONDITION_LIMIT:
            warnings.warn(
                f"bordered system one-norm condition estimate {kappa:.3e} "
                f"exceeds {CONDITION_LIMIT:g}",
                IllConditionedWarning,
                stacklevel=2,
            )

    dm = system.dofmap
    return SolutionFields(
        velocity=x[: dm.n_velocity],
        pressure=x[dm.n_velocity: dm.n_velocity + dm.n_pressure],
        multiplier=float(x[-1]),
        residual_norm=rel,
    )
