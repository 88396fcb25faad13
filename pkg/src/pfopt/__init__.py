"""Sorted-L1 penalized portfolio optimization."""
__version__ = "0.1.0"

from .kernels import BACKEND
from .sorted_l1 import (bh_lambda_sequence, dual_sorted_l1_norm, lambda_sequence,
                        log_grid, prox_sorted_l1, sorted_l1_norm)
from .estimators import (ReturnsMatrix, condition_number, correlation_summary,
                         ledoit_wolf_shrinkage, sample_cov, sample_mean)
from .solver import (SolverConfig, SolverProblem, SolverSolution, admm_solve,
                     cycode_solve, dual_gap, gmv_closed_form, objective, ridge_closed_form)

__all__ = [
    "__version__", "BACKEND",
    "bh_lambda_sequence", "dual_sorted_l1_norm", "lambda_sequence", "log_grid",
    "prox_sorted_l1", "sorted_l1_norm",
    "ReturnsMatrix", "condition_number", "correlation_summary", "ledoit_wolf_shrinkage",
    "sample_cov", "sample_mean",
    "SolverConfig", "SolverProblem", "SolverSolution", "admm_solve", "cycode_solve",
    "dual_gap", "gmv_closed_form", "objective", "ridge_closed_form",
]
