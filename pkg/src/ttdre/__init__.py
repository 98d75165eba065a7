"""Space-time tensor-train solver for differential Riccati equations.

The backward matrix differential Riccati equation is discretized with
implicit Euler over the whole time horizon at once; the space-time unknown
lives in a three-core tensor-train format (time x column x row), each
Newton-Kleinman linearization is solved by an alternating AMEn sweep with
preconditioned GMRES on the core-local systems, and coarse spatial levels
warm-start fine ones. A dense sequential oracle provides ground truth at
small sizes, and an open-loop KKT module demonstrates the low-rank structure
the solver exploits.
"""

from .amen import AmenConfig, AmenReport, amen_solve
from .analysis import (THRESHOLDS, StorageReport, UnfoldingSpectrum, export_results,
                       storage_report, truncation_table, unfolding_singular_values)
from .dre import (ControlSystem, NewtonConfig, SolveReport, TimeGrid,
                  assemble_rhs_c, assemble_static_operator, newton_kleinman,
                  nonlinear_residual)
from .multilevel import (LevelHierarchy, build_prolongation, hierarchy_from_problems,
                         nested_solve, prolong_tt)
from .openloop import (KktSystem, OpenLoopSolution, assemble_kkt, block_residuals,
                       solution_spectra, solve_kkt)
from .oracle import (DenseTrajectory, compare_trajectory, dense_allatonce,
                     dense_newton, sequential_dre, trajectory_to_tt)
from .problems import (ProblemInstance, build_motivation_1d, build_problem,
                       simulate_closed_loop)
from .tt import (TTOperator, TTVector, Timeslice, extract_timeslice, orthogonalize,
                 tt_add, tt_dot, tt_from_dense, tt_load, tt_norm, tt_round,
                 tt_save, tt_to_dense, tt_zero)

__version__ = "0.1.0"

__all__ = [
    "AmenConfig", "AmenReport", "amen_solve",
    "THRESHOLDS", "StorageReport", "UnfoldingSpectrum", "export_results",
    "storage_report", "truncation_table", "unfolding_singular_values",
    "ControlSystem", "NewtonConfig", "SolveReport", "TimeGrid",
    "assemble_rhs_c", "assemble_static_operator", "newton_kleinman",
    "nonlinear_residual",
    "LevelHierarchy", "build_prolongation", "hierarchy_from_problems",
    "nested_solve", "prolong_tt",
    "KktSystem", "OpenLoopSolution", "assemble_kkt", "block_residuals",
    "solution_spectra", "solve_kkt",
    "DenseTrajectory", "compare_trajectory", "dense_allatonce", "dense_newton",
    "sequential_dre", "trajectory_to_tt",
    "ProblemInstance", "build_motivation_1d", "build_problem",
    "simulate_closed_loop",
    "TTOperator", "TTVector", "Timeslice", "extract_timeslice", "orthogonalize",
    "tt_add", "tt_dot", "tt_from_dense", "tt_load", "tt_norm", "tt_round",
    "tt_save", "tt_to_dense", "tt_zero",
    "__version__",
]
