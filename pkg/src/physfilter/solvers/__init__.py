"""Hand-written LP, QP and bilinear solvers."""

from .bilinear import (BilinearProgram, BilinearSolution, BilinearTerms, McCormickOptions,
                       SolverOptions, dump_bilinear, dump_lp, relaxation_bound,
                       solve_bilinear)
from .linalg import GeneralFactor, SymmetricFactor, solve_symmetric_indefinite
from .lp import LinearProgram, LpSolution, solve_lp
from .qp import QpSolution, solve_eq_qp, solve_qp

__all__ = [
    "BilinearProgram", "BilinearSolution", "BilinearTerms", "McCormickOptions",
    "SolverOptions", "dump_bilinear", "dump_lp", "relaxation_bound", "solve_bilinear", "GeneralFactor",
    "SymmetricFactor", "solve_symmetric_indefinite", "LinearProgram", "LpSolution",
    "solve_lp", "QpSolution", "solve_eq_qp", "solve_qp",
]
