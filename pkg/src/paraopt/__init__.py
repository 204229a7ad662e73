"""Optimal control of semilinear parabolic systems.

Solvers for the reduced first-order extremal equations of tracking-type
parabolic optimal control problems, scaled-norm diagnostics for
turnpike and sensitivity decay, and receding-horizon MPC benchmarks on
specialized a-priori time grids.
"""

__version__ = "0.1.0"

from .extremal import (
    ExtremalPoint,
    KKTSystem,
    Perturbation,
    assemble_kkt,
    frozen_newton_solve,
    newton_solve,
    recover_control,
    residual,
    solve_kkt,
    solve_static,
    static_as_perturbation,
)
from .problem import OCPSpec, cost, dynamics_residual, reference_dynamic, reference_static
from .spatial import SpatialGrid, build_elliptic, build_grid, control_injection
from .timegrid import TimeGrid, exponential_grid, piecewise_uniform_grid, time_weights, uniform_grid

__all__ = [
    "ExtremalPoint",
    "KKTSystem",
    "OCPSpec",
    "Perturbation",
    "SpatialGrid",
    "TimeGrid",
    "assemble_kkt",
    "build_elliptic",
    "build_grid",
    "control_injection",
    "cost",
    "dynamics_residual",
    "exponential_grid",
    "frozen_newton_solve",
    "newton_solve",
    "piecewise_uniform_grid",
    "recover_control",
    "reference_dynamic",
    "reference_static",
    "residual",
    "solve_kkt",
    "solve_static",
    "static_as_perturbation",
    "time_weights",
    "uniform_grid",
]
