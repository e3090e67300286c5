"""Objectives supplying the structured gradient and Hessian products.

The Newton matvec never touches a dense ``n x m`` matrix. It only needs,
at an iterate ``X = U diag(S) V^T``,

* ``grad F @ V``, ``grad F^T @ U`` and products of ``grad F`` (or its
  transpose) with thin matrices;
* the four Hessian blocks ``(V^T kron I) H (V kron I)``,
  ``(V^T kron I) H (I kron U)``, ``(I kron U^T) H (V kron I)`` and
  ``(I kron U^T) H (I kron U)``.

``Objective.at(x)`` returns an evaluator bound to one iterate. Anything
shared between the value, gradient and Hessian products (the residuals on
the observed entries, for instance) is computed once per evaluator and
discarded together with it after the retraction.
"""

from __future__ import annotations

import abc

import numpy as np
import scipy.sparse as sp

from .linalg import sparse_from_triplets, vec
from .variety import FactoredMatrix

__all__ = [
    "Objective",
    "CompletionObjective",
    "SparseApproxObjective",
    "zero_iterate",
]


def zero_iterate(n, m):
    """The zero matrix as a rank-0 iterate."""
    return FactoredMatrix(np.zeros((n, 0)), np.zeros(0), np.zeros((m, 0)))


class Objective(abc.ABC):
    shape: tuple

    @abc.abstractmethod
    def at(self, x: FactoredMatrix):
        """Evaluator bound to iterate ``x``."""

    def value(self, x):
        return self.at(x).value()

    def _check(self, x):
        if x.shape != self.shape:
            raise ValueError(f"iterate shape {x.shape} does not match objective shape {self.shape}")

    # dense oracles, small problems only

    @abc.abstractmethod
    def dense_gradient(self, X):
        """``grad F`` at the dense matrix ``X``."""

    @abc.abstractmethod
    def dense_hessian(self):
        """``nm x nm`` Hessian acting on ``vec(X)``."""

    def dense_value(self, X):
        raise NotImplementedError


class _Evaluator:
    """Products shared by both objectives; subclasses fill in the rest."""

    def __init__(self, x):
        self.x = x
        self.U, self.S, self.V = x.U, x.S, x.V

    def grad_V(self):
        return self.grad_apply(self.V)

    def grad_T_U(self):
        return self.grad_apply_T(self.U)


class _Pattern:
    """CSR sparsity pattern of a fixed index set, reusable for new values."""

    def __init__(self, rows, cols, shape):
        self.rows, self.cols, self.shape = rows, cols, shape
        order = sp.csr_matrix((np.arange(1, rows.size + 1, dtype=float), (rows, cols)), shape=shape)
        order.sort_indices()
        self._indices = order.indices
        self._indptr = order.indptr
        self._perm = order.data.astype(np.int64) - 1

    def matrix(self, values):
        return sp.csr_matrix((values[self._perm], self._indices, self._indptr), shape=self.shape)

    def sample(self, L, R):
        """Entries of ``L @ R.T`` on the pattern."""
        return np.einsum("ij,ij->i", L[self.rows], R[self.cols])


class CompletionObjective(Objective):
    """``F(X) = 1/2 sum_{(i,j) in Gamma} (X_ij - B_ij)^2``.

    Parameters
    ----------
    rows, cols, values : array_like
        Observed entries; duplicate positions are rejected. Observed zeros
        count as observations.
    shape : tuple of int
    """

    def __init__(self, rows, cols, values, shape):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        # validates ranges and duplicates
        sparse_from_triplets(rows, cols, values, shape)
        self.shape = tuple(shape)
        self.values = values
        self.pattern = _Pattern(rows, cols, self.shape)

    @classmethod
    def from_sparse(cls, B):
        B = sp.coo_matrix(B)
        return cls(B.row, B.col, B.data, B.shape)

    @property
    def rows(self):
        return self.pattern.rows

    @property
    def cols(self):
        return self.pattern.cols

    @property
    def n_observed(self):
        return self.values.size

    def at(self, x):
        self._check(x)
        return _CompletionEval(self, x)

    def observed_matrix(self):
        return self.pattern.matrix(self.values)

    def mask(self):
        M = np.zeros(self.shape)
        M[self.rows, self.cols] = 1.0
        return M

    def dense_value(self, X):
        d = X[self.rows, self.cols] - self.values
        return 0.5 * float(d @ d)

    def dense_gradient(self, X):
        G = np.zeros(self.shape)
        G[self.rows, self.cols] = X[self.rows, self.cols] - self.values
        return G

    def dense_hessian(self):
        return np.diag(vec(self.mask()))


class _CompletionEval(_Evaluator):
    def __init__(self, obj, x):
        super().__init__(x)
        self.obj = obj
        pat = obj.pattern
        self.residual = pat.sample(self.U * self.S, self.V) - obj.values
        self._grad = pat.matrix(self.residual)

    def value(self):
        return 0.5 * float(self.residual @ self.residual)

    def grad_apply(self, M):
        return self._grad @ M

    def grad_apply_T(self, M):
        return self._grad.T @ M

    def _masked(self, L, R):
        return self.obj.pattern.matrix(self.obj.pattern.sample(L, R))

    def hess_VV(self, dU):
        return self._masked(dU, self.V) @ self.V

    def hess_VU(self, X):
        return self._masked(self.U, X.T) @ self.V

    def hess_UV(self, dU):
        return (self._masked(dU, self.V).T @ self.U).T

    def hess_UU(self, X):
        return (self._masked(self.U, X.T).T @ self.U).T


class SparseApproxObjective(Objective):
    """``F(X) = 1/2 ||X - B||_F^2`` for a sparse ``B``.

    The gradient ``X - B`` is kept as a low-rank term minus a sparse term
    and never densified.
    """

    def __init__(self, B):
        self.B = sp.csr_matrix(B, dtype=float)
        self.BT = self.B.T.tocsr()
        self.shape = self.B.shape
        self._bnorm2 = float(self.B.multiply(self.B).sum())

    @classmethod
    def from_triplets(cls, rows, cols, values, shape):
        return cls(sparse_from_triplets(rows, cols, values, shape))

    def at(self, x):
        self._check(x)
        return _ApproxEval(self, x)

    def dense_value(self, X):
        return 0.5 * float(np.linalg.norm(X - self.B.toarray()) ** 2)

    def dense_gradient(self, X):
        return X - self.B.toarray()

    def dense_hessian(self):
        n, m = self.shape
        return np.eye(n * m)


class _ApproxEval(_Evaluator):
    def __init__(self, obj, x):
        super().__init__(x)
        self.obj = obj
        self._US = self.U * self.S
        self._VS = self.V * self.S

    def value(self):
        B = self.obj.B.tocoo()
        cross = float(np.einsum("ij,ij->i", self._US[B.row], self.V[B.col]) @ B.data)
        val = 0.5 * (float(self.S @ self.S) - 2.0 * cross + self.obj._bnorm2)
        return max(val, 0.0)

    def grad_apply(self, M):
        return self._US @ (self.V.T @ M) - self.obj.B @ M

    def grad_apply_T(self, M):
        return self._VS @ (self.U.T @ M) - self.obj.BT @ M

    def hess_VV(self, dU):
        return dU

    def hess_VU(self, X):
        return self.U @ (X @ self.V)

    def hess_UV(self, dU):
        return (self.U.T @ dU) @ self.V.T

    def hess_UU(self, X):
        return X
