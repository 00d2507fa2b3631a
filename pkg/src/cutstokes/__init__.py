"""Interior-penalty dG solver for Stokes on implicitly defined 2D domains."""
from __future__ import annotations

from .analysis import (
    ConvergenceTable,
    ErrorReport,
    coercivity_estimate,
    convergence_rates,
    energy_norms,
    h1_error,
    infsup_estimate,
    l2_pressure_error,
    run_convergence_study,
    solve_level,
)
from .assembly import (
    SaddleSystem,
    assemble_a,
    assemble_b,
    assemble_rhs,
    assemble_system,
    penalty_field,
)
from .fespace import SpacePair, build_spaces, interpolate_field
from .geometry import LevelSetDomain, disc_domain, square_domain
from .mesh import ActiveMesh, build_active_mesh, build_background
from .problems import ManufacturedProblem, make_problem
from .solver import SolutionFields, solve_stokes

__version__ = "0.1.0"

__all__ = [
    "ActiveMesh",
    "ConvergenceTable",
    "ErrorReport",
    "LevelSetDomain",
    "ManufacturedProblem",
    "SaddleSystem",
    "SolutionFields",
    "SpacePair",
    "assemble_a",
    "assemble_b",
    "assemble_rhs",
    "assemble_system",
    "build_active_mesh",
    "build_background",
    "build_spaces",
    "coercivity_estimate",
    "convergence_rates",
    "disc_domain",
    "energy_norms",
    "h1_error",
    "infsup_estimate",
    "interpolate_field",
    "l2_pressure_error",
    "make_problem",
    "penalty_field",
    "run_convergence_study",
    "solve_level",
    "solve_stokes",
    "square_domain",
    "__version__",
]
