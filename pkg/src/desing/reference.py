"""Dense reference Newton method on the total space.

Everything here is assembled explicitly from Kronecker products: the
horizontal basis ``Q``, the Lagrangian Hessian ``[[H, C], [C^T, 0]]``, its
reduction ``Q^T G Q`` and the right-hand side ``Q^T f``. Memory grows like
``(nm)^2``, so this path is for small problems and cross-checks of the fast
code in :mod:`desing.newton`.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .linalg import mat, transposition_matrix, truncated_svd, vec
from .newton import ConvergenceRecord, retract_qr
from .variety import DensePoint, FactoredMatrix, build_Q, kernel_complement, scalings_from_spectrum

__all__ = [
    "DenseSystem",
    "factor_point",
    "multiplier",
    "curvature_block",
    "dense_system",
    "paper_block_hessian",
    "semi_implicit_maps",
    "dense_newton_step",
    "dense_newton",
]


class DenseSystem(NamedTuple):
    x: FactoredMatrix
    Y: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    C: np.ndarray
    Lambda: np.ndarray
    G: np.ndarray
    G_loc: np.ndarray
    f: np.ndarray
    g: np.ndarray


def factor_point(p: DensePoint):
    """SVD factors of ``A`` whose ``V`` spans the complement of ``range(Y)``.

    When ``A`` has rank below ``r`` a plain truncated SVD may return right
    singular vectors for the zero singular values that are not orthogonal
    to ``Y``; restricting to the complement of ``Y`` first avoids that.
    """
    n, m, r = p.shape
    if r == m:
        return FactoredMatrix(*truncated_svd(p.A, r))
    W = kernel_complement(p.Y)
    u, s, v = truncated_svd(p.A @ W, r)
    return FactoredMatrix(u, s, W @ v)


def multiplier(x: FactoredMatrix, Y, grad):
    """``Lambda = -Z Z^T grad F Y`` with ``Z`` spanning the complement of ``range(U)``."""
    U = x.U
    GY = grad @ Y
    return -(GY - U @ (U.T @ GY))


def curvature_block(Lambda, m):
    """``C = (I_m kron Lambda) T_{m, m-r}``: maps ``vec(dY)`` to ``vec(Lambda dY^T)``."""
    k = Lambda.shape[1]
    return np.kron(np.eye(m), Lambda) @ transposition_matrix(m, k).toarray()


def dense_system(x: FactoredMatrix, Y, obj, gauss_newton=False):
    """Assemble the reduced Newton system at ``(U S V^T, Y)``.

    ``G_loc`` is the full product ``Q^T G Q`` (no block identities used).
    """
    n, m = x.shape
    A = x.to_dense()
    grad = obj.dense_gradient(A)
    H = obj.dense_hessian()
    Lambda = multiplier(x, Y, grad)
    C = curvature_block(Lambda, m)
    if gauss_newton:
        C = np.zeros_like(C)
    k = Y.shape[1]
    G = np.block([[H, C], [C.T, np.zeros((m * k, m * k))]])
    Q = build_Q(x, Y)
    f = np.concatenate([-vec(grad + Lambda @ Y.T), np.zeros(m * k)])
    return DenseSystem(x, Y, Q, H, C, Lambda, G, Q.T @ G @ Q, f, Q.T @ f)


def paper_block_hessian(ds: DenseSystem):
    """``G_loc`` from the block formula that uses ``Q12^T C = 0``."""
    nr = ds.x.shape[0] * ds.x.rank
    nm = ds.H.shape[0]
    Q11, Q12, Q22 = ds.Q[:nm, :nr], ds.Q[:nm, nr:], ds.Q[nm:, nr:]
    H, C = ds.H, ds.C
    return np.block([
        [Q11.T @ H @ Q11, Q11.T @ H @ Q12 + Q11.T @ C @ Q22],
        [Q12.T @ H @ Q11 + Q22.T @ C.T @ Q11, Q12.T @ H @ Q12],
    ])


def semi_implicit_maps(x: FactoredMatrix, Y):
    """Explicit ``Pi`` and ``W`` on ``[vec(dU); vec(dPhi)]``.

    ``Pi`` applies ``I - V V^T`` on the right of ``dPhi`` and ``W`` maps
    ``dPhi`` to ``dP = dPhi Y``.
    """
    n, m = x.shape
    r = x.rank
    k = Y.shape[1]
    V = x.V
    Pi = np.zeros((n * r + r * m, n * r + r * m))
    Pi[: n * r, : n * r] = np.eye(n * r)
    Pi[n * r:, n * r:] = np.kron(np.eye(m) - V @ V.T, np.eye(r))
    W = np.zeros((n * r + r * k, n * r + r * m))
    W[: n * r, : n * r] = np.eye(n * r)
    W[n * r:, n * r:] = np.kron(Y.T, np.eye(r))
    return Pi, W


def dense_newton_step(x: FactoredMatrix, Y, obj, gauss_newton=False):
    """Solve the reduced system densely; returns ``(dU, dP, system)``.

    Singular systems get the minimum-norm solution, which is what GMRES from
    a zero start produces for a symmetric consistent system.
    """
    ds = dense_system(x, Y, obj, gauss_newton=gauss_newton)
    w = np.linalg.lstsq(ds.G_loc, ds.g, rcond=1e-13)[0]
    n, m = x.shape
    r = x.rank
    dU = mat(w[: n * r], n, r)
    dP = mat(w[n * r:], r, m - r)
    return dU, dP, ds


def dense_newton(p0: DensePoint, obj, tol=1e-16, max_iterations=50):
    """Newton iteration with the explicit reduced Hessian and QR retraction."""
    p = p0
    history = []
    status = "max_iterations"
    for it in range(max_iterations):
        x = factor_point(p)
        sc = scalings_from_spectrum(x.S)
        dU, dP, ds = dense_newton_step(x, p.Y, obj)
        dA = dU @ x.V.T - (x.U * sc.S1) @ dP @ p.Y.T
        dY = (x.V * sc.S2) @ dP
        snorm = float(np.sum(dU**2) + np.sum((sc.S1[:, None] * dP) ** 2))
        fval = obj.dense_value(p.A)
        p = retract_qr(p, dA, dY)
        history.append(ConvergenceRecord(it, fval, snorm, float(np.linalg.norm(ds.g)), list(x.S), 0.0))
        if snorm <= tol:
            status = "converged"
            break
    return p, history, status
