"""Unconditionally positive, conservative linear multistep integrators for
production-destruction ODE systems, with a convergence/work-precision
harness and built-in test problems."""

from .exceptions import (GridError, InvalidInitialStateError, MetricError,
                         MplmError, NumericError, PwdViolationError,
                         ReferenceSolutionError, StartupError,
                         StructuralViolationError)
from .harness import (ConvergenceReport, WorkPrecisionTable, convergence_study,
                      mass_residual, max_abs_error, mean_relative_error,
                      observed_order, reference_solution, relative_max_error,
                      work_precision)
from .linsolve import (MMatrixReport, PDEval, SystemMatrix, assemble, solve,
                       verify_mmatrix)
from .methods import (LMCoefficients, MethodLadder, catalog, default_ladder,
                      get_method, method_names, validate_order_conditions)
from .pds import (PDSProblem, REALMIN, check_conservativity, eval_pd, rhs,
                  sanitize_initial)
from .problems import (DiffusionGrid, PROBLEM_NAMES, appendix_pds, algal_bloom,
                       brusselator, diffusion_fv, linear_test, make_problem,
                       saceirqd, sample_positive_states)
from .stepping import (StepHistory, Trajectory, compute_pwd_ladder, integrate,
                       mpe_step, mplm_step, startup)

__version__ = "0.1.0"

__all__ = [
    "ConvergenceReport", "DiffusionGrid", "GridError",
    "InvalidInitialStateError", "LMCoefficients", "MMatrixReport",
    "MethodLadder", "MetricError", "MplmError", "NumericError", "PDEval",
    "PDSProblem", "PROBLEM_NAMES", "PwdViolationError", "REALMIN",
    "ReferenceSolutionError", "StartupError", "StepHistory",
    "StructuralViolationError", "SystemMatrix", "Trajectory",
    "WorkPrecisionTable", "algal_bloom", "appendix_pds", "assemble",
    "brusselator", "catalog", "check_conservativity", "compute_pwd_ladder",
    "convergence_study", "default_ladder", "diffusion_fv", "eval_pd",
    "get_method", "integrate", "linear_test", "make_problem",
    "mass_residual", "max_abs_error", "mean_relative_error", "method_names",
    "mpe_step", "mplm_step", "observed_order", "reference_solution",
    "relative_max_error", "rhs", "saceirqd", "sample_positive_states",
    "sanitize_initial", "solve", "startup", "validate_order_conditions",
    "verify_mmatrix", "work_precision",
]
