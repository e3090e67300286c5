"""Dense and sparse linear-algebra primitives shared by the solvers.

Matrices are vectorized by stacking columns, so ``vec(A X B) = (B^T kron A) vec(X)``
holds for every helper in this package.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

__all__ = [
    "RankDeficientError",
    "KrylovConfig",
    "GMRESResult",
    "vec",
    "mat",
    "transposition_permutation",
    "transposition_matrix",
    "truncated_svd",
    "thin_qr",
    "gmres_solve",
    "finite_difference_gradient",
    "sparse_from_triplets",
    "check_linearity",
]


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when a factorization needs full column rank and does not get it."""


@dataclass(frozen=True)
class KrylovConfig:
    max_iterations: int = 500
    restart: int = 100
    rel_tolerance: float = 1e-10
    abs_tolerance: float = 1e-14

    def __post_init__(self):
        if self.rel_tolerance <= 0 or self.abs_tolerance <= 0:
            raise ValueError("Krylov tolerances must be positive")
        if self.restart < 1 or self.max_iterations < 1:
            raise ValueError("restart and max_iterations must be >= 1")
        if self.restart > self.max_iterations:
            raise ValueError("restart must not exceed max_iterations")


class GMRESResult(NamedTuple):
    x: np.ndarray
    residuals: list
    converged: bool
    iterations: int
    # Arnoldi basis (k, n) and Hessenberg (k + 1, k) of the last cycle
    basis: np.ndarray | None = None
    hessenberg: np.ndarray | None = None


def vec(M):
    """Stack the columns of ``M`` into a 1-D array."""
    M = np.asarray(M)
    if M.ndim != 2:
        raise ValueError(f"vec expects a 2-D array, got ndim={M.ndim}")
    return M.reshape(-1, order="F")


def mat(v, rows, cols):
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if v.ndim != 1 or v.size != rows * cols:
        raise ValueError(f"cannot reshape vector of size {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def transposition_permutation(m, n):
    """Operator ``vec(X) -> vec(X^T)`` for ``X`` of shape ``(m, n)``."""
    if m < 1 or n < 1:
        raise ValueError("dimensions must be positive")

    def matvec(v):
        return vec(mat(np.ravel(v), m, n).T)

    def rmatvec(v):
        return vec(mat(np.ravel(v), n, m).T)

    return LinearOperator((m * n, m * n), matvec=matvec, rmatvec=rmatvec, dtype=float)


def transposition_matrix(m, n):
    """Explicit sparse permutation matrix of :func:`transposition_permutation`."""
    idx = np.arange(m * n).reshape((m, n), order="F")
    # row k of T picks entry perm[k] of vec(X)
    perm = vec(idx.T)
    return sp.csr_matrix((np.ones(m * n), (np.arange(m * n), perm)), shape=(m * n, m * n))


def _canonical_signs(U, Vt):
    # largest-magnitude entry of every left singular vector made positive
    if U.shape[1] == 0:
        return U, Vt
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, Vt * signs[:, None]


def truncated_svd(A, r):
    """Best rank-``r`` approximation ``A ~ U diag(S) V^T``.

    Returns
    -------
    U : ndarray, shape (n, r)
    S : ndarray, shape (r,)
        Nonnegative and nonincreasing. Exact zeros are kept.
    V : ndarray, shape (m, r)
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("truncated_svd expects a 2-D array")
    if not 0 <= r <= min(A.shape):
        raise ValueError(f"rank {r} out of range for shape {A.shape}")
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    U, Vt = _canonical_signs(U[:, :r], Vt[:r])
    return U, S[:r].copy(), Vt.T.copy()


def thin_qr(M, tol=1e-12):
    """Thin QR with a positive diagonal in ``R``.

    Raises
    ------
    RankDeficientError
        If some ``|R_ii|`` falls below ``tol * max|R_jj|``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < M.shape[1]:
        raise ValueError(f"thin_qr needs a tall 2-D array, got shape {M.shape}")
    Q, R = np.linalg.qr(M, mode="reduced")
    d = np.diag(R).copy()
    if d.size:
        scale = np.max(np.abs(d))
        if scale == 0 or np.min(np.abs(d)) <= tol * scale:
            raise RankDeficientError("matrix is numerically rank deficient")
    signs = np.where(d < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def _as_matvec(op):
    if callable(op) and not hasattr(op, "matvec"):
        return op
    if sp.issparse(op) or isinstance(op, np.ndarray):
        return lambda v: op @ v
    return op.matvec


def gmres_solve(op, rhs, cfg=None):
    """Restarted GMRES started from the zero vector.

    The Arnoldi basis is built with modified Gram-Schmidt followed by a
    second orthogonalization pass. Each restart cycle solves its small
    Hessenberg least-squares problem with ``lstsq``, which keeps singular but
    consistent systems well behaved: every iterate stays in the Krylov space
    of ``rhs``.

    Parameters
    ----------
    op : LinearOperator, ndarray, sparse matrix or callable
        Square operator.
    rhs : ndarray
    cfg : KrylovConfig, optional

    Returns
    -------
    GMRESResult
        ``converged`` is False when the iteration budget ran out; ``x`` is
        then the best iterate found.
    """
    cfg = cfg or KrylovConfig()
    b = np.asarray(rhs, dtype=float).ravel()
    shape = getattr(op, "shape", None)
    if shape is not None and (shape[0] != shape[1] or shape[1] != b.size):
        raise ValueError(f"operator shape {shape} incompatible with rhs of size {b.size}")
    apply = _as_matvec(op)

    n = b.size
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    target = max(cfg.rel_tolerance * bnorm, cfg.abs_tolerance)
    history = [bnorm]
    if bnorm <= target:
        return GMRESResult(x, history, True, 0)

    r = b.copy()
    rnorm = bnorm
    total = 0
    best_x, best_res = x.copy(), rnorm
    while total < cfg.max_iterations:
        k_max = min(cfg.restart, cfg.max_iterations - total, n)
        basis = np.zeros((k_max + 1, n))
        hess = np.zeros((k_max + 1, k_max))
        basis[0] = r / rnorm
        # Givens rotations track the residual norm without solving each step
        cs = np.zeros(k_max)
        sn = np.zeros(k_max)
        g = np.zeros(k_max + 1)
        g[0] = rnorm
        k = 0
        breakdown = False
        while k < k_max:
            w = np.asarray(apply(basis[k]), dtype=float).ravel()
            if not np.all(np.isfinite(w)):
                raise FloatingPointError("non-finite value produced by the operator")
            wnorm0 = np.linalg.norm(w)
            for _ in range(2):
                for i in range(k + 1):
                    c = basis[i] @ w
                    hess[i, k] += c
                    w -= c * basis[i]
            hnext = np.linalg.norm(w)
            hess[k + 1, k] = hnext
            col = hess[: k + 2, k].copy()
            for i in range(k):
                t = cs[i] * col[i] + sn[i] * col[i + 1]
                col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1]
                col[i] = t
            denom = np.hypot(col[k], col[k + 1])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = col[k] / denom, col[k + 1] / denom
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k += 1
            total += 1
            history.append(abs(g[k]))
            if hnext <= 1e-14 * max(wnorm0, 1.0):
                breakdown = True
                break
            basis[k] = w / hnext
            if abs(g[k]) <= target:
                break
        y = np.linalg.lstsq(hess[: k + 1, :k], np.r_[rnorm, np.zeros(k)], rcond=None)[0]
        x = x + basis[:k].T @ y
        r = b - np.asarray(apply(x), dtype=float).ravel()
        rnorm = np.linalg.norm(r)
        history[-1] = rnorm
        if rnorm < best_res:
            best_x, best_res = x.copy(), rnorm
        cycle = (basis[:k], hess[: k + 1, :k])
        if rnorm <= target:
            return GMRESResult(x, history, True, total, *cycle)
        if breakdown:
            # invariant subspace exhausted; further cycles cannot improve
            break
    return GMRESResult(best_x, history, best_res <= target, total, *cycle)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h=1e-5):
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.reshape(-1)
    for i in range(base.size):
        e = np.zeros_like(base)
        e[i] = h
        fp = f((base + e).reshape(x.shape))
        fm = f((base - e).reshape(x.shape))
        flat[i] = (fp - fm) / (2 * h)
    return grad


def sparse_from_triplets(rows, cols, values, shape):
    """Build a CSR matrix from ``(i, j, value)`` triplets, rejecting duplicates."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if not rows.shape == cols.shape == values.shape:
        raise ValueError("triplet arrays must have equal length")
    n, m = shape
    if rows.size and (rows.min() < 0 or rows.max() >= n or cols.min() < 0 or cols.max() >= m):
        raise ValueError(f"triplet index out of range for shape {shape}")
    keys = rows * m + cols
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        k = uniq[np.argmax(counts > 1)]
        raise ValueError(f"duplicate entry at ({k // m}, {k % m})")
    return sp.csr_matrix((values, (rows, cols)), shape=shape)


def check_linearity(apply, dim, rng, probes=5):
    """Largest relative linearity defect of ``apply`` over random probe pairs."""
    worst = 0.0
    for _ in range(probes):
        x, y = rng.standard_normal(dim), rng.standard_normal(dim)
        a, b = rng.standard_normal(2)
        lhs = apply(a * x + b * y)
        rhs = a * apply(x) + b * apply(y)
        scale = np.linalg.norm(x) + np.linalg.norm(y)
        worst = max(worst, np.linalg.norm(lhs - rhs) / scale)
    return worst
