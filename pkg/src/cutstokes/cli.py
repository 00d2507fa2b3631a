"""Experiment runner: convergence studies and stability diagnostics.

Configuration comes from defaults, an optional flat key=value config file,
and command-line flags, in increasing precedence.  Studies write a CSV table
(columns: h_max, vel_h1_error, vel_rate, pres_l2_error, pres_rate; final
mean row) plus two-column log-log data files for plotting.  Diagnostics mode
runs the stability estimators and quadrature/inverse-inequality audits on
the coarsest levels and emits a pass/fail report.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import (
    ConvergenceTable,
    ErrorReport,
    LevelResult,
    coercivity_estimate,
    convergence_rates,
    h1_l2_inverse_audit,
    infsup_estimate,
    norm_equivalence_check,
    quadrature_audit,
    solve_level,
    trace_constant_audit,
)
from .assembly import assemble_system, assemble_vc_gram, dump_system, penalty_field
from .errors import CutStokesError, PenaltyTooSmall, UnknownProblem
from .fespace import build_spaces
from .mesh import build_active_mesh, build_background
from .problems import make_problem

DEFAULT_H0 = {"square": 0.25, "disc": 0.62500625}

# audit tolerances
QUAD_AUDIT_TOL = 1e-10          # divergence-theorem residual, relative
TRACE_AUDIT_TOL = 1e-9          # allowed excess over the trace bound
INFSUP_DRIFT_TOL = 0.20         # relative beta variation across levels
COERCIVITY_FLOOR = 1e-10        # of max |diag A|: "near zero" counts as failed


@dataclass
class StudyConfig:
    """One study or diagnostics run."""

    domain: str = "square"
    order: int = 1
    levels: int = 1
    h0: float | None = None     # None: domain default (matches paper sequences)
    sigma_const: float = 4.0
    quad_degree_volume: int | None = None
    quad_degree_facet: int | None = None
    curved_subdivisions: int | None = None
    output_path: str | None = None
    seed: int = 0
    diagnostics: bool = False
    dump_system: str | None = None

    def resolved_h0(self) -> float:
        if self.h0 is not None:
            return self.h0
        try:
            return DEFAULT_H0[self.domain]
        except KeyError:
            raise UnknownProblem(f"unknown domain {self.domain!r}") from None

    def resolved_output(self) -> Path:
        if self.output_path is not None:
            return Path(self.output_path)
        return Path(f"{self.domain}_p{self.order}.csv")

    def validate(self) -> None:
        if self.domain not in DEFAULT_H0:
            raise UnknownProblem(f"unknown domain {self.domain!r}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.h0 is not None and not self.h0 > 0:
            raise ValueError(f"h0 must be positive, got {self.h0}")
        if not self.sigma_const > 0:
            raise ValueError(f"sigma-const must be positive, got {self.sigma_const}")
        for name in ("quad_degree_volume", "quad_degree_facet"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")
        if self.curved_subdivisions is not None and self.curved_subdivisions < 1:
            raise ValueError(
                f"curved-subdivisions must be >= 1, got {self.curved_subdivisions}"
            )


_INT_KEYS = {"order", "levels", "seed", "quad_degree", "quad_degree_volume",
             "quad_degree_facet", "curved_subdivisions"}
_FLOAT_KEYS = {"h0", "sigma_const"}
_STR_KEYS = {"domain", "output_path", "out", "dump_system"}


def parse_config_file(path: str | Path) -> dict:
    """Flat ``key = value`` lines; '#' comments; keys match StudyConfig."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key in _INT_KEYS:
            values[key] = int(value)
        elif key in _FLOAT_KEYS:
            values[key] = float(value)
        elif key in _STR_KEYS:
            values[key] = value
        else:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
    if "out" in values:
        values["output_path"] = values.pop("out")
    if "quad_degree" in values:
        qd = values.pop("quad_degree")
        values.setdefault("quad_degree_volume", qd)
        values.setdefault("quad_degree_facet", qd)
    return values


def build_config(args: argparse.Namespace) -> StudyConfig:
    """Merge defaults, config file, and CLI flags (increasing precedence)."""
    config = StudyConfig()
    if args.config is not None:
        config = replace(config, **parse_config_file(args.config))
    overrides = {}
    for name in ("domain", "order", "levels", "h0", "sigma_const",
                 "curved_subdivisions", "seed", "dump_system"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if args.quad_degree is not None:
        overrides["quad_degree_volume"] = args.quad_degree
        overrides["quad_degree_facet"] = args.quad_degree
    if args.out is not None:
        overrides["output_path"] = args.out
    if args.diagnostics:
        overrides["diagnostics"] = True
    config = replace(config, **overrides)
    config.validate()
    return config


# --------------------------------------------------------------------------
# output formatting


def _fmt(x: float | None) -> str:
    """Shortest round-trip decimal; empty cell for missing values."""
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return repr(float(x))


def format_csv(table: ConvergenceTable) -> str:
    lines = ["h_max,vel_h1_error,vel_rate,pres_l2_error,pres_rate"]
    vr = table.rates["vel_h1"]
    pr = table.rates["pres_l2"]
    for i, row in enumerate(table.rows):
        lines.append(",".join([
            _fmt(row.h_max),
            _fmt(row.vel_h1),
            _fmt(vr[i]) if i > 0 else "",
            _fmt(row.pres_l2),
            _fmt(pr[i]) if i > 0 else "",
        ]))
    lines.append(",".join([
        "mean", "", _fmt(table.means["vel_h1"]), "", _fmt(table.means["pres_l2"]),
    ]))
    return "\n".join(lines) + "\n"


def format_loglog(rows: list[ErrorReport], column: str) -> str:
    lines = [f"# h {column}  (log-log plot data)"]
    for row in rows:
        lines.append(f"{_fmt(row.h_max)} {_fmt(getattr(row, column))}")
    return "\n".join(lines) + "\n"


def write_outputs(table: ConvergenceTable, out_path: Path) -> list[Path]:
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(format_csv(table))
    written = [out_path]
    for column, tag in (("vel_h1", "vel"), ("pres_l2", "pres")):
        path = out_path.with_name(f"{out_path.stem}.{tag}.loglog.dat")
        path.write_text(format_loglog(table.rows, column))
        written.append(path)
    return written


# --------------------------------------------------------------------------
# study mode


def run_study(config: StudyConfig, *, log=print) -> ConvergenceTable:
    """Run the refinement sweep and write CSV + log-log files.

    A level that fails numerically aborts the sweep; completed levels are
    still written before the error propagates.
    """
    config.validate()
    problem = make_problem(config.domain)
    h0 = config.resolved_h0()
    out_path = config.resolved_output()
    details: list[LevelResult] = []
    log(f"study: domain={config.domain} order={config.order} "
        f"levels={config.levels} h0={h0!r} sigma_const={config.sigma_const!r}")

    def flush() -> ConvergenceTable | None:
        if not details:
            return None
        table = convergence_rates([d.report for d in details])
        write_outputs(table, out_path)
        return table

    try:
        for i in range(config.levels):
            result, fields, spaces, system, penalty = solve_level(
                problem, h0 / 2 ** i, config.order,
                sigma_const=config.sigma_const,
                quad_degree_volume=config.quad_degree_volume,
                quad_degree_facet=config.quad_degree_facet,
                curved_subdivisions=config.curved_subdivisions,
            )
            if config.dump_system is not None and i == 0:
                dump_system(system, Path(config.dump_system))
            details.append(result)
            r = result.report
            log(f"level {i}: h={r.h_max!r} elements={result.n_elements} "
                f"dofs={r.dofs} vel_h1={r.vel_h1:.6e} pres_l2={r.pres_l2:.6e} "
                f"residual={result.residual:.2e} [{result.seconds:.1f}s]")
            flush()
    except CutStokesError as exc:
        flush()
        log(f"level {len(details)} failed: {type(exc).__name__}: {exc}")
        raise
    table = flush()
    log(f"wrote {out_path}")
    return table


# --------------------------------------------------------------------------
# diagnostics mode


def run_diagnostics(config: StudyConfig, *, log=print) -> bool:
    """Stability and quadrature audits on the coarsest (up to three) levels.

    Returns True when every audit passes; raises PenaltyTooSmall when the
    coercivity audit fails (after the full report is printed).
    """
    config.validate()
    problem = make_problem(config.domain)
    h0 = config.resolved_h0()
    n_levels = min(config.levels, 3)
    log(f"diagnostics: domain={config.domain} order={config.order} "
        f"levels={n_levels} sigma_const={config.sigma_const!r} seed={config.seed}")

    all_pass = True
    coercivity_failed = False
    betas: list[float] = []
    for i in range(n_levels):
        h = h0 / 2 ** i
        background = build_background(problem.domain.bounding_box, h)
        mesh = build_active_mesh(background, problem.domain)
        spaces = build_spaces(
            mesh, config.order,
            quad_degree_volume=config.quad_degree_volume,
            quad_degree_facet=config.quad_degree_facet,
            curved_subdivisions=config.curved_subdivisions,
        )
        penalty = penalty_field(mesh, spaces, config.sigma_const)
        system = assemble_system(mesh, spaces, penalty, problem.body_force)
        log(f"level {i}: h={background.h!r} elements={mesh.n_elements} "
            f"dofs={system.dofmap.size}")

        lam = coercivity_estimate(system, seed=config.seed)
        floor = COERCIVITY_FLOOR * float(np.abs(system.A.diagonal()).max())
        ok = lam > floor
        all_pass &= ok
        coercivity_failed |= not ok
        log(f"  coercivity lambda_min = {lam:+.6e} "
            f"(floor {floor:.1e}) ... {'PASS' if ok else 'FAIL'}")

        N_u = assemble_vc_gram(mesh, spaces, penalty)
        beta = infsup_estimate(system, N_u, seed=config.seed)
        betas.append(beta)
        ok = beta > 0
        all_pass &= ok
        log(f"  inf-sup beta = {beta:.6f} ... {'PASS' if ok else 'FAIL'}")

        qa = quadrature_audit(spaces, seed=config.seed)
        ok = qa["worst_residual"] <= QUAD_AUDIT_TOL * qa["scale"]
        all_pass &= ok
        log(f"  quadrature divergence residual = {qa['worst_residual']:.2e} "
            f"(tol {QUAD_AUDIT_TOL * qa['scale']:.1e}) ... "
            f"{'PASS' if ok else 'FAIL'}")

        ta = trace_constant_audit(spaces)
        ok = ta["worst_ratio"] <= 1.0 + TRACE_AUDIT_TOL
        all_pass &= ok
        log(f"  trace-inequality worst ratio = {ta['worst_ratio']:.12f} "
            f"(bound up to {ta['largest_bound']:.1f}) ... "
            f"{'PASS' if ok else 'FAIL'}")

        ia = h1_l2_inverse_audit(spaces)
        ok = np.isfinite(ia["worst_constant"]) and ia["worst_constant"] > 0
        all_pass &= ok
        log(f"  h1-l2 inverse constant = {ia['worst_constant']:.4f} ... "
            f"{'PASS' if ok else 'FAIL'}")

        if i == 0:
            C = norm_equivalence_check(spaces, penalty, N_u, samples=100,
                                       seed=config.seed)
            ok = np.isfinite(C) and C > 0
            all_pass &= ok
            log(f"  norm equivalence C (full vs reduced velocity norm) = "
                f"{C:.4f} ... {'PASS' if ok else 'FAIL'}")

    if len(betas) >= 2:
        drift = (max(betas) - min(betas)) / max(betas)
        ok = drift < INFSUP_DRIFT_TOL
        all_pass &= ok
        log(f"inf-sup drift across levels = {100 * drift:.1f}% "
            f"(tol {100 * INFSUP_DRIFT_TOL:.0f}%) ... {'PASS' if ok else 'FAIL'}")
    else:
        log("inf-sup drift across levels: skipped (single level)")

    log(f"overall: {'PASS' if all_pass else 'FAIL'}")
    if coercivity_failed:
        raise PenaltyTooSmall(
            f"coercivity audit failed: sigma_const={config.sigma_const!r} is "
            f"too small for this mesh (smallest eigenvalue not positive)"
        )
    return all_pass


# --------------------------------------------------------------------------
# entry point


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cutstokes",
        description="Stokes convergence studies on implicit level-set domains",
    )
    parser.add_argument("--domain", choices=sorted(DEFAULT_H0))
    parser.add_argument("--order", type=int, help="velocity degree p (pressure p-1)")
    parser.add_argument("--levels", type=int, help="number of mesh-halving levels")
    parser.add_argument("--h0", type=float,
                        help="coarsest mesh size (default: domain-specific)")
    parser.add_argument("--sigma-const", dest="sigma_const", type=float,
                        help="penalty constant C_sigma (default 4)")
    parser.add_argument("--quad-degree", dest="quad_degree", type=int,
                        help="override volume and facet quadrature degree")
    parser.add_argument("--curved-subdivisions", dest="curved_subdivisions",
                        type=int, help="boundary chords per curved facet (default 8)")
    parser.add_argument("--out", help="CSV output path")
    parser.add_argument("--seed", type=int, help="seed for randomized checks")
    parser.add_argument("--diagnostics", action="store_true",
                        help="run stability/quadrature audits instead of a study")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--dump-system", dest="dump_system",
                        help="write the coarsest-level system to this path prefix")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        config = build_config(args)
    except (ValueError, OSError, UnknownProblem) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        if config.diagnostics:
            ok = run_diagnostics(config)
            return 0 if ok else 3
        run_study(config)
    except UnknownProblem as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except CutStokesError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
