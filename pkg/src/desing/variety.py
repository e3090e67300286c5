"""Geometry of the desingularized bounded-rank variety.

A point of the variety of ``n x m`` matrices with rank at most ``r`` is lifted
to a pair ``(A, Y)`` with ``A Y = 0`` and ``Y^T Y = I``, where ``Y`` spans an
``(m - r)``-dimensional subspace of the kernel of ``A``. The set of such pairs
is a smooth manifold even where ``A`` loses rank, and the constructions below
only ever use the bounded scalings ``S/sqrt(S^2+1)`` and ``1/sqrt(S^2+1)`` of
the singular values.

The explicit Kronecker constructions (``build_N``, ``build_Q`` and the
projectors) are dense and meant for small shapes: they are the reference
against which the factored code paths are checked.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .linalg import thin_qr, truncated_svd, vec

__all__ = [
    "FactoredMatrix",
    "Scalings",
    "DensePoint",
    "TangentCoords",
    "scalings_from_spectrum",
    "build_N",
    "build_Q",
    "densify",
    "kernel_complement",
    "horizontal_projector",
    "horizontal_project",
    "verify_sigma_min_bound",
    "tangent_distance",
    "numerical_rank",
    "random_factored",
    "random_dense_point",
]


@dataclass(frozen=True)
class FactoredMatrix:
    """Rank-``r`` iterate ``A = U diag(S) V^T``.

    ``U`` and ``V`` have orthonormal columns; ``S`` is nonnegative and
    nonincreasing and may contain exact zeros.
    """

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U, S, V = (np.asarray(a, dtype=float) for a in (self.U, self.S, self.V))
        if U.ndim != 2 or V.ndim != 2 or S.ndim != 1:
            raise ValueError("expected U (n, r), S (r,), V (m, r)")
        if not U.shape[1] == S.size == V.shape[1]:
            raise ValueError(f"inconsistent ranks: U {U.shape}, S {S.shape}, V {V.shape}")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "V", V)

    @property
    def shape(self):
        return self.U.shape[0], self.V.shape[0]

    @property
    def rank(self):
        return self.S.size

    def to_dense(self):
        return (self.U * self.S) @ self.V.T

    def orthonormality_error(self):
        r = self.rank
        eye = np.eye(r)
        return max(np.linalg.norm(self.U.T @ self.U - eye), np.linalg.norm(self.V.T @ self.V - eye))

    def is_valid(self, tol=1e-10):
        S = self.S
        return (
            self.orthonormality_error() <= tol
            and bool(np.all(S >= 0))
            and bool(np.all(np.diff(S) <= 0))
        )


@dataclass(frozen=True)
class Scalings:
    S1: np.ndarray
    S2: np.ndarray


@dataclass(frozen=True)
class DensePoint:
    """Explicit point ``(A, Y)`` of the total space."""

    A: np.ndarray
    Y: np.ndarray

    @property
    def shape(self):
        n, m = self.A.shape
        return n, m, m - self.Y.shape[1]

    def constraint_errors(self):
        """Return ``(||A Y||_F, ||Y^T Y - I||_F)``."""
        k = self.Y.shape[1]
        return np.linalg.norm(self.A @ self.Y), np.linalg.norm(self.Y.T @ self.Y - np.eye(k))


@dataclass(frozen=True)
class TangentCoords:
    """Tangent direction ``dA = dU V^T - U S1 dPhi`` with gauge ``dPhi V = 0``."""

    dU: np.ndarray
    dPhi: np.ndarray

    def gauge_error(self, V):
        return np.linalg.norm(self.dPhi @ V)


def scalings_from_spectrum(S):
    """``S1 = S/sqrt(S^2+1)`` and ``S2 = 1/sqrt(S^2+1)``, elementwise.

    Total for every finite nonnegative ``S``; both outputs lie in ``[0, 1]``.
    """
    S = np.asarray(S, dtype=float)
    if np.any(S < 0):
        raise ValueError("singular values must be nonnegative")
    # hypot avoids overflow of S**2 for huge S
    h = np.hypot(S, 1.0)
    return Scalings(S / h, 1.0 / h)


def build_N(p: DensePoint):
    """Constraint Jacobian plus gauge rows at ``p``.

    Acts on ``[vec(dA); vec(dY)]`` and has block structure
    ``[[Y^T kron I_n, I_{m-r} kron A], [0, I_{m-r} kron Y^T]]``.
    """
    A, Y = p.A, p.Y
    n, m = A.shape
    if Y.shape[0] != m:
        raise ValueError(f"Y has {Y.shape[0]} rows, expected {m}")
    k = Y.shape[1]
    top = np.hstack([np.kron(Y.T, np.eye(n)), np.kron(np.eye(k), A)])
    bottom = np.hstack([np.zeros((k * k, n * m)), np.kron(np.eye(k), Y.T)])
    return np.vstack([top, bottom])


def build_Q(x: FactoredMatrix, Y):
    """Orthonormal basis of the horizontal space at ``(U S V^T, Y)``.

    ``Q = [[V kron I_n, -Y kron (U S1)], [0, I_{m-r} kron (V S2)]]``; the first
    ``n r`` columns parametrize ``dU`` and the remaining ``(m-r) r`` columns
    parametrize ``vec(dP)`` with ``dP`` of shape ``(r, m-r)``.
    """
    n, m = x.shape
    r = x.rank
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (m, m - r):
        raise ValueError(f"Y must have shape {(m, m - r)}, got {Y.shape}")
    sc = scalings_from_spectrum(x.S)
    k = m - r
    US1 = x.U * sc.S1
    VS2 = x.V * sc.S2
    top = np.hstack([np.kron(x.V, np.eye(n)), -np.kron(Y, US1)])
    bottom = np.hstack([np.zeros((m * k, n * r)), np.kron(np.eye(k), VS2)])
    return np.vstack([top, bottom])


def kernel_complement(V):
    """Orthonormal basis of the orthogonal complement of ``range(V)``.

    Taken as the trailing columns of the complete Householder QR of ``V``,
    which makes the choice deterministic.
    """
    m, r = V.shape
    Qc, _ = np.linalg.qr(V, mode="complete")
    return Qc[:, r:]


def densify(x: FactoredMatrix):
    return DensePoint(x.to_dense(), kernel_complement(x.V))


def _horizontal_pieces(p):
    N = build_N(p)
    Z = N @ N.T
    return N, sla.cho_factor(Z)


def horizontal_projector(p: DensePoint):
    """Dense matrix ``I - N^T (N N^T)^{-1} N``."""
    N, cho = _horizontal_pieces(p)
    return np.eye(N.shape[1]) - N.T @ sla.cho_solve(cho, N)


def horizontal_project(p: DensePoint, z):
    N, cho = _horizontal_pieces(p)
    z = np.asarray(z, dtype=float)
    if z.shape != (N.shape[1],):
        raise ValueError(f"expected vector of length {N.shape[1]}, got shape {z.shape}")
    return z - N.T @ sla.cho_solve(cho, N @ z)


def verify_sigma_min_bound(p: DensePoint):
    """Smallest singular value of ``N(p)``; at least one on the manifold.

    For ``r = m`` there are no constraints, ``N`` has no rows and the
    result is ``inf``.
    """
    N = build_N(p)
    if N.shape[0] == 0:
        return float("inf")
    return float(np.linalg.svd(N, compute_uv=False).min())


def tangent_distance(p: DensePoint, q: DensePoint):
    """Grassmann distance ``||P_p - P_q||_F`` between horizontal spaces."""
    if p.A.shape != q.A.shape or p.Y.shape != q.Y.shape:
        raise ValueError("points must have the same shape")
    return float(np.linalg.norm(horizontal_projector(p) - horizontal_projector(q)))


def numerical_rank(S, rtol=1e-12):
    """Count singular values above ``rtol * max(S)``; ``S`` itself is untouched."""
    S = np.asarray(S, dtype=float)
    if S.size == 0 or S.max() == 0:
        return 0
    return int(np.sum(S > rtol * S.max()))


def random_factored(n, m, r, rng, zeros=0, scale=1.0):
    """Random valid iterate; the last ``zeros`` singular values are exactly 0."""
    if not 0 <= zeros <= r <= min(n, m):
        raise ValueError("need 0 <= zeros <= r <= min(n, m)")
    U = np.linalg.qr(rng.standard_normal((n, r)))[0]
    V = np.linalg.qr(rng.standard_normal((m, r)))[0]
    S = np.sort(np.abs(scale * rng.standard_normal(r)))[::-1].copy()
    if zeros:
        S[r - zeros:] = 0.0
    return FactoredMatrix(U, S, V)


def random_dense_point(n, m, r, rng, zeros=0, scale=1.0):
    return densify(random_factored(n, m, r, rng, zeros=zeros, scale=scale))


def factored_from_dense(A, r):
    return FactoredMatrix(*truncated_svd(A, r))


def qf(M):
    """Q factor with positive ``diag(R)``."""
    return thin_qr(M)[0]


def vec_pair(dA, dY):
    return np.concatenate([vec(dA), vec(dY)])
