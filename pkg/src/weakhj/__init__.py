"""Numerical solvers for weakly coupled Hamilton-Jacobi systems on the circle.

The package discretizes systems

    h_i(x, Du_i) + g_i(x, u_1, ..., u_m) = 0

on a uniform periodic grid with a monotone Lax-Friedrichs scheme, and
provides stationary solvers (scalar, alternating and monolithic),
explicit time evolution, a semigroup route for equations decreasing in
the unknown, and the vanishing-discount computation of critical values.
"""

from .config import ConfigError, build_discounted, build_system, load_config, sample_config
from .coupled_solver import (
    CoupledTrajectory,
    IterationTrace,
    coupled_newton,
    coupled_residual,
    detect_period,
    evolve_coupled,
    gauss_seidel,
    long_time_limit,
    verify_iteration_bounds,
)
from .critical_value import DiscountedSpec, alpha_curve, find_c0, solve_discounted, vanishing_discount
from .geometry import GridField, SpaceTimeField, TorusGrid, make_grid, sample, sup_norm
from .hamiltonian import (
    BoundsLedger,
    CouplingLaw,
    KineticHamiltonian,
    SystemSpec,
    bounds_ledger,
    check_chain_condition,
    coupling_strength,
    predicted_sup_bound,
    quadratic,
)
from .scalar_solver import (
    InstabilityError,
    NonConvergenceError,
    ScalarProblem,
    SchemeParams,
    evolve_scalar,
    linear_problem,
    residual,
    solve_increasing,
)
from .semigroup import aubry_set, decreasing_pipeline, forward_limit, solve_decreasing

__version__ = "0.1.0"

__all__ = [
    "BoundsLedger", "ConfigError", "CoupledTrajectory", "CouplingLaw", "DiscountedSpec", "GridField",
    "InstabilityError", "IterationTrace", "KineticHamiltonian", "NonConvergenceError", "ScalarProblem",
    "SchemeParams", "SpaceTimeField", "SystemSpec", "TorusGrid", "alpha_curve", "aubry_set", "bounds_ledger",
    "build_discounted", "build_system", "check_chain_condition", "coupled_newton", "coupled_residual",
    "coupling_strength", "decreasing_pipeline", "detect_period", "evolve_coupled", "evolve_scalar", "find_c0",
    "forward_limit", "gauss_seidel", "linear_problem", "load_config", "long_time_limit", "make_grid",
    "predicted_sup_bound", "quadratic", "residual", "sample", "sample_config", "solve_decreasing",
    "solve_discounted", "solve_increasing", "sup_norm", "vanishing_discount", "verify_iteration_bounds",
]
