"""Krylov solvers for large sparse Sylvester equations ``A X + X B = C1 C2^T``.

The solution is returned as a low-rank product ``X1 @ X2.T``. Three engines
share one driver: a full orthogonal block Arnoldi, a truncated variant that
keeps only the last ``k`` blocks, and a sketched variant that whitens the
truncated basis with a random subspace embedding.
"""

from .errors import (
    Breakdown,
    DimensionMismatch,
    MaxIterations,
    NonConvergence,
    SingularOperator,
    SylkitError,
)
from .krylov import SolveResult, SolverConfig, solve, true_residual
from .sketch import SketchedQR, SketchOperator
from .sparse import SparseMatrix, gen_convdiff_2d, gen_convdiff_3d

__version__ = "0.1.0"

__all__ = [
    "Breakdown",
    "DimensionMismatch",
    "MaxIterations",
    "NonConvergence",
    "SingularOperator",
    "SketchOperator",
    "SketchedQR",
    "SolveResult",
    "SolverConfig",
    "SparseMatrix",
    "SylkitError",
    "gen_convdiff_2d",
    "gen_convdiff_3d",
    "solve",
    "true_residual",
]
