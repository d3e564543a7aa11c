"""Zeroth-order stochastic optimization."""
from .cg_solvers import (
    AcceleratedSchedule,
    InexactSchedule,
    ZscgSchedule,
    zscg,
    zscg_accelerated,
    zsgd_inexact_nonconvex,
)
from .constraints import Box, IcgParams, L1Ball, L2Ball, Simplex, fw_gap, gradient_mapping, icg
from .cubic import CubicModel, CubicParams, solve_cubic_subproblem, zscrn
from .errors import (
    ConfigError,
    ContractViolation,
    DivergenceError,
    NumericError,
    PracticalScheduleWarning,
    SolverError,
    ZoOptError,
)
from .estimators import (
    SmoothingParams,
    StructuredHessian,
    grad_averaged,
    grad_two_point,
    hess_averaged,
    hess_one_point,
    hess_three_point,
    hess_two_point,
    min_eigenvalue,
)
from .harness import load_config, run_experiment, trend_check
from .highdim import HighDimSchedule, truncate_top_s, zsgd, zsgd_truncated
from .oracle import LeastSquares, Quadratic, SparseSupport, StrictSaddle2D, ZeroOrderOracle, problem_from_config
from .records import RunRecord

__all__ = [name for name in dir() if not name.startswith("_") and name not in {
    "cg_solvers", "constraints", "cubic", "errors", "estimators", "harness", "highdim", "oracle", "records"}]
__version__ = "0.1.0"
