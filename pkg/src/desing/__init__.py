"""Desingularized Newton methods on the variety of bounded-rank matrices."""

from .linalg import KrylovConfig, RankDeficientError, gmres_solve, mat, truncated_svd, vec
from .newton import ConvergenceRecord, NewtonConfig, SolveResult, newton_step, retract_qr, retract_svd, solve
from .objectives import CompletionObjective, SparseApproxObjective
from .trustregion import InitStrategy, TrustRegionConfig, power_init, tr_solve
from .variety import DensePoint, FactoredMatrix, TangentCoords, build_N, build_Q, scalings_from_spectrum

__version__ = "0.1.0"

__all__ = [
    "KrylovConfig",
    "RankDeficientError",
    "gmres_solve",
    "mat",
    "vec",
    "truncated_svd",
    "ConvergenceRecord",
    "NewtonConfig",
    "SolveResult",
    "newton_step",
    "retract_qr",
    "retract_svd",
    "solve",
    "CompletionObjective",
    "SparseApproxObjective",
    "InitStrategy",
    "TrustRegionConfig",
    "power_init",
    "tr_solve",
    "DensePoint",
    "FactoredMatrix",
    "TangentCoords",
    "build_N",
    "build_Q",
    "scalings_from_spectrum",
]
