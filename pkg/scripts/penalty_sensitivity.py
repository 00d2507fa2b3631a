#!/usr/bin/env python3
"""Penalty-constant sensitivity sweep on a coarse mesh.

For each penalty multiplier C the script reports the smallest eigenvalue
of the velocity form (coercivity), the inf-sup constant, and - when the
system is solvable - the discretization errors.  Small C loses
coercivity (the solve is skipped once the eigenvalue goes negative);
large C keeps stability but inflates the error constant.
"""
from __future__ import annotations

import argparse
import sys

from cutstokes.analysis import (
    coercivity_estimate,
    h1_error,
    infsup_estimate,
    l2_pressure_error,
)
from cutstokes.assembly import assemble_system, assemble_vc_gram, penalty_field
from cutstokes.errors import CutStokesError
from cutstokes.fespace import build_spaces
from cutstokes.mesh import build_active_mesh, build_background
from cutstokes.problems import make_problem
from cutstokes.solver import solve_stokes

SWEEP = [1e-3, 0.1, 1.0, 4.0, 10.0]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--domain", choices=["square", "disc"], default="square")
    parser.add_argument("--order", type=int, default=2)
    parser.add_argument("--h", type=float, default=0.125)
    parser.add_argument("--constants", type=float, nargs="+", default=SWEEP)
    args = parser.parse_args(argv)

    problem = make_problem(args.domain)
    mesh = build_active_mesh(
        build_background(problem.domain.bounding_box, args.h), problem.domain)
    spaces = build_spaces(mesh, args.order)
    print(f"domain={args.domain} order={args.order} h={args.h} "
          f"elements={mesh.n_elements}")
    print(f"{'C':>8}  {'lambda_min':>13}  {'beta':>9}  "
          f"{'vel_h1_err':>11}  {'pres_l2_err':>11}")
    for c in args.constants:
        penalty = penalty_field(mesh, spaces, c)
        system = assemble_system(mesh, spaces, penalty, problem.body_force)
        lam = coercivity_estimate(system)
        beta = infsup_estimate(system, assemble_vc_gram(mesh, spaces, penalty))
        if lam <= 0:
            print(f"{c:8g}  {lam:+13.4e}  {beta:9.5f}  "
                  f"{'-':>11}  {'-':>11}  (not coercive; solve skipped)")
            continue
        try:
            fields = solve_stokes(system)
        except CutStokesError as exc:
            print(f"{c:8g}  {lam:+13.4e}  {beta:9.5f}  solve failed: {exc}")
            continue
        ve = h1_error(fields, spaces, problem)
        pe = l2_pressure_error(fields, spaces, problem)
        print(f"{c:8g}  {lam:+13.4e}  {beta:9.5f}  {ve:11.5e}  {pe:11.5e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
