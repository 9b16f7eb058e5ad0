"""Instance-specific parameter selection for BQP solvers with a graph-attention classifier."""

from .annealer import DEFAULT_PARAMS, PARAM_SPACE, RunLog, SolverParams, brute_force, solve
from .bqp import BqpInstance, evaluate_objective, check_feasibility, generate_qkp, generate_tsp, tsp_to_bqp

__version__ = "0.1.0"

__all__ = [
    "BqpInstance",
    "DEFAULT_PARAMS",
    "PARAM_SPACE",
    "RunLog",
    "SolverParams",
    "brute_force",
    "check_feasibility",
    "evaluate_objective",
    "generate_qkp",
    "generate_tsp",
    "solve",
    "tsp_to_bqp",
]
