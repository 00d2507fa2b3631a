"""Manufactured Stokes benchmark problems with symbolically derived data.

Velocity fields are divergence-free and vanish on the domain boundary;
pressures are normalized to zero mean over the exact domain.  The body force
f = -div(grad u) + grad p and the velocity gradient are derived with sympy
and compiled to vectorized numpy callables.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sym

from .errors import UnknownProblem
from .geometry import LevelSetDomain, disc_domain, square_domain

Vec = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact solution triple and the matching body force on a domain."""

    name: str
    domain: LevelSetDomain
    velocity: Vec            # (x, y) -> (..., 2)
    velocity_gradient: Vec   # (x, y) -> (..., 2, 2), entry [i, j] = d u_i / d x_j
    pressure: Vec            # (x, y) -> (...)
    body_force: Vec          # (x, y) -> (..., 2)


def _lamb(expr, x, y):
    fn = sym.lambdify((x, y), expr, modules="numpy")

    def call(xv, yv):
        xv = np.asarray(xv, dtype=float)
        out = np.asarray(fn(xv, yv), dtype=float)
        return np.broadcast_to(out, xv.shape).copy() if out.shape != xv.shape else out

    return call


def _vector(fx, fy):
    def call(xv, yv):
        return np.stack([fx(xv, yv), fy(xv, yv)], axis=-1)

    return call


def _tensor(f00, f01, f10, f11):
    def call(xv, yv):
        row0 = np.stack([f00(xv, yv), f01(xv, yv)], axis=-1)
        row1 = np.stack([f10(xv, yv), f11(xv, yv)], axis=-1)
        return np.stack([row0, row1], axis=-2)

    return call


def _compile(name: str, domain: LevelSetDomain, u1, u2, p, x, y) -> ManufacturedProblem:
    div = sym.simplify(sym.diff(u1, x) + sym.diff(u2, y))
    if div != 0:
        raise ValueError(f"manufactured velocity for {name!r} is not divergence-free")
    f1 = -sym.diff(u1, x, 2) - sym.diff(u1, y, 2) + sym.diff(p, x)
    f2 = -sym.diff(u2, x, 2) - sym.diff(u2, y, 2) + sym.diff(p, y)
    grads = [sym.diff(u, v) for u in (u1, u2) for v in (x, y)]
    lam = lambda e: _lamb(e, x, y)  # noqa: E731
    return ManufacturedProblem(
        name=name,
        domain=domain,
        velocity=_vector(lam(u1), lam(u2)),
        velocity_gradient=_tensor(*(lam(g) for g in grads)),
        pressure=lam(p),
        body_force=_vector(lam(sym.simplify(f1)), lam(sym.simplify(f2))),
    )


@lru_cache(maxsize=None)
def _square_problem() -> ManufacturedProblem:
    x, y = sym.symbols("x y", real=True)
    g = (sym.cos(2 * sym.pi * x) - 1) * sym.sin(2 * sym.pi * y)
    u1 = g
    u2 = -g.subs([(x, y), (y, x)], simultaneous=True)
    p = sym.sin(2 * sym.pi * x) * sym.cos(2 * sym.pi * y)  # zero mean on the square
    return _compile("square", square_domain(), u1, u2, p, x, y)


@lru_cache(maxsize=None)
def _disc_problem(radius: float, decay: float | None) -> ManufacturedProblem:
    x, y = sym.symbols("x y", real=True)
    r2 = x ** 2 + y ** 2
    rr = sym.nsimplify(radius) ** 2
    k = 3 * sym.pi / 2 if decay is None else sym.nsimplify(decay)
    w = (r2 - rr) * sym.exp(-k * r2 / 2)
    u1 = -y * w
    u2 = x * w
    p_raw = (r2 - rr) ** 2 * (2 * y ** 2 + x ** 2) * sym.exp(-k * r2) / 2
    # zero-mean shift: the polar mean of p_raw over the disc in t = rho^2
    t = sym.symbols("t", positive=True)
    mean = sym.Rational(3, 4) / rr * sym.integrate(
        t * (t - rr) ** 2 * sym.exp(-k * t), (t, 0, rr)
    )
    p = p_raw - mean
    return _compile("disc", disc_domain(radius=radius), u1, u2, p, x, y)


def make_problem(name: str, *, radius: float = 1.0,
                 decay: float | None = None) -> ManufacturedProblem:
    """Benchmark problem by name: 'square' or 'disc'."""
    if name == "square":
        return _square_problem()
    if name == "disc":
        return _disc_problem(radius, decay)
    raise UnknownProblem(f"no manufactured problem named {name!r}")
