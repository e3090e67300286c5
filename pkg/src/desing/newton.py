"""Fast desingularized Newton method on the bounded-rank variety.

Tangent directions are kept in semi-implicit coordinates ``(dU, dPhi)`` with
``dU`` of shape ``(n, r)`` and ``dPhi`` of shape ``(r, m)`` subject to
``dPhi V = 0``; the induced matrix step is ``dA = dU V^T - U S1 dPhi``.
The reduced Hessian of the Lagrangian is applied in ``O((n + m) r^2)``
operations plus the cost of the objective's structured products, and the
Newton system is solved by GMRES from the zero vector. Only the bounded
scalings ``S1 = S/sqrt(S^2+1)`` and ``S2 = 1/sqrt(S^2+1)`` appear, so
singular values may be (and stay) exactly zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .linalg import KrylovConfig, gmres_solve, mat, thin_qr, vec
from .variety import DensePoint, FactoredMatrix, TangentCoords, scalings_from_spectrum

__all__ = [
    "NewtonConfig",
    "ConvergenceRecord",
    "StepInfo",
    "SolveResult",
    "ReducedSystem",
    "first_order_residual",
    "rhs",
    "reduced_hessian_matvec",
    "gauss_newton_matvec",
    "newton_step",
    "step_norm",
    "retract_svd",
    "retract_qr",
    "solve",
]


@dataclass(frozen=True)
class NewtonConfig:
    """Outer-loop settings.

    ``tol`` bounds the squared step norm ``||dU||^2 + ||S1 dPhi||^2``;
    a run only counts as converged when the projected gradient norm is
    also below ``grad_tol``.
    """

    tol: float = 1e-16
    grad_tol: float = 1e-8
    max_iterations: int = 50
    krylov: KrylovConfig = field(default_factory=KrylovConfig)
    forcing: bool = True
    hessian: str = "full"
    patience: int = 5
    divergence_factor: float = 1e8

    def __post_init__(self):
        if self.hessian not in ("full", "gauss-newton"):
            raise ValueError(f"unknown hessian variant {self.hessian!r}")


@dataclass
class ConvergenceRecord:
    iteration: int
    functional_value: float
    step_norm: float
    projected_grad_norm: float
    sigma_spectrum: list
    wall_time: float
    krylov_iterations: int = 0
    krylov_converged: bool = True
    radius: float = float("nan")
    rho: float = float("nan")
    accepted: bool = True


class StepInfo(NamedTuple):
    step_norm: float
    krylov_iterations: int
    krylov_converged: bool
    residuals: list


class SolveResult(NamedTuple):
    x: FactoredMatrix
    history: list
    status: str

    @property
    def converged(self):
        return self.status == "converged"


def _right_proj(X, V):
    # X (I - V V^T) for X of shape (k, m)
    return X - (X @ V) @ V.T


class ReducedSystem:
    """Reduced Newton system at one iterate.

    The operator acts on ``[vec(dU); vec(dPhi)]`` of length ``n r + r m``.
    Arbitrary ``dPhi`` is accepted and projected by ``I - V V^T`` first, and
    the ``dPhi`` block of every output already satisfies the gauge.
    """

    def __init__(self, x: FactoredMatrix, obj, gauss_newton=False, evaluator=None):
        self.x = x
        self.obj = obj
        self.ev = evaluator if evaluator is not None else obj.at(x)
        self.gauss_newton = gauss_newton
        self.n, self.m = x.shape
        self.r = x.rank
        sc = scalings_from_spectrum(x.S)
        self.S1, self.S2 = sc.S1, sc.S2
        self.size = self.n * self.r + self.r * self.m
        self.matvec_count = 0

    def split(self, v):
        k = self.n * self.r
        v = np.asarray(v, dtype=float).ravel()
        if v.size != self.size:
            raise ValueError(f"expected vector of length {self.size}, got {v.size}")
        return mat(v[:k], self.n, self.r), mat(v[k:], self.r, self.m)

    def join(self, dU, dPhi):
        return np.concatenate([vec(dU), vec(dPhi)])

    def apply(self, dU, dPhi):
        """Return ``(L1, L2)`` with shapes ``(n, r)`` and ``(r, m)``."""
        self.matvec_count += 1
        ev, U, V, S1, S2 = self.ev, self.x.U, self.x.V, self.S1, self.S2
        Phi = _right_proj(dPhi, V)
        X1 = S1[:, None] * Phi
        L1 = ev.hess_VV(dU) - ev.hess_VU(X1)
        L2 = -_right_proj(S1[:, None] * ev.hess_UV(dU), V) + _right_proj(S1[:, None] * ev.hess_UU(X1), V)
        if not self.gauss_newton:
            # multiplier terms, Lambda = -(I - U U^T) grad F Y
            T = ev.grad_apply(Phi.T * S2)
            L1 = L1 - (T - U @ (U.T @ T))
            W = (dU - U @ (U.T @ dU)) * S2
            P = ev.grad_apply_T(W)
            L2 = L2 - (P - V @ (V.T @ P)).T
        return L1, L2

    def matvec(self, v):
        L1, L2 = self.apply(*self.split(v))
        out = self.join(L1, L2)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite value in reduced Hessian matvec")
        return out

    @property
    def operator(self):
        return LinearOperator((self.size, self.size), matvec=self.matvec, rmatvec=self.matvec, dtype=float)

    def rhs_blocks(self):
        ev, V = self.ev, self.x.V
        g1 = -ev.grad_V()
        K = ev.grad_T_U()
        g2 = self.S1[:, None] * (K - V @ (V.T @ K)).T
        return g1, g2

    def rhs(self):
        return self.join(*self.rhs_blocks())

    def model_decrease(self, d, g=None, Gd=None):
        """Predicted decrease ``g^T d - 1/2 d^T G d`` of the quadratic model."""
        g = self.rhs() if g is None else g
        Gd = self.matvec(d) if Gd is None else Gd
        return float(g @ d - 0.5 * d @ Gd)


def _projected_gradient_norm(ev, x):
    U, V = x.U, x.V
    UtG = ev.grad_T_U().T
    GV = ev.grad_V()
    tail = GV - U @ (U.T @ GV)
    return float(np.sqrt(np.sum(UtG * UtG) + np.sum(tail * tail)))


def first_order_residual(x: FactoredMatrix, obj, evaluator=None):
    """``||grad F - (I - U U^T) grad F (I - V V^T)||_F`` computed from thin products."""
    ev = evaluator if evaluator is not None else obj.at(x)
    return _projected_gradient_norm(ev, x)


def rhs(x: FactoredMatrix, obj):
    """Right-hand side ``[-vec(grad F V); vec(S1 U^T grad F (I - V V^T))]``."""
    return ReducedSystem(x, obj).rhs()


def reduced_hessian_matvec(x, obj, du, dphi):
    sys = ReducedSystem(x, obj)
    L1, L2 = sys.apply(mat(np.ravel(du), sys.n, sys.r), mat(np.ravel(dphi), sys.r, sys.m))
    return vec(L1), vec(L2)


def gauss_newton_matvec(x, obj, du, dphi):
    """Matvec with the multiplier (curvature) terms dropped."""
    sys = ReducedSystem(x, obj, gauss_newton=True)
    L1, L2 = sys.apply(mat(np.ravel(du), sys.n, sys.r), mat(np.ravel(dphi), sys.r, sys.m))
    return vec(L1), vec(L2)


def step_norm(x: FactoredMatrix, step: TangentCoords):
    """``||dA||_F^2 = ||dU||_F^2 + ||S1 dPhi||_F^2`` for a gauge-fixed step."""
    S1 = scalings_from_spectrum(x.S).S1
    return float(np.sum(step.dU**2) + np.sum((S1[:, None] * step.dPhi) ** 2))


def solve_reduced(sys: ReducedSystem, krylov: KrylovConfig):
    """GMRES solve of a reduced system; returns ``(step, vector, gmres_result)``."""
    res = gmres_solve(sys.operator, sys.rhs(), krylov)
    dU, dPhi = sys.split(res.x)
    dPhi = _right_proj(dPhi, sys.x.V)
    return TangentCoords(dU, dPhi), sys.join(dU, dPhi), res


def newton_step(x: FactoredMatrix, obj, cfg: NewtonConfig | None = None, krylov=None, evaluator=None):
    """One Newton direction at ``x``.

    Returns
    -------
    step : TangentCoords
        Gauge-fixed, ``dPhi V = 0``.
    info : StepInfo
    """
    cfg = cfg or NewtonConfig()
    sys = ReducedSystem(x, obj, gauss_newton=cfg.hessian == "gauss-newton", evaluator=evaluator)
    step, _, res = solve_reduced(sys, krylov or cfg.krylov)
    if not (np.all(np.isfinite(step.dU)) and np.all(np.isfinite(step.dPhi))):
        raise FloatingPointError("non-finite Newton step")
    return step, StepInfo(step_norm(x, step), res.iterations, res.converged, res.residuals)


def retract_svd(x: FactoredMatrix, step: TangentCoords, scale=1.0):
    """Rank-``r`` truncated SVD of ``A + scale * dA`` from the factors.

    ``A + dA = [U, dU] [S V^T - S1 dPhi; V^T]`` has rank at most ``2r``;
    both thin factors are QR-factored and only the ``2r x 2r`` core is
    decomposed.
    """
    U, S, V = x.U, x.S, x.V
    r = x.rank
    S1 = scalings_from_spectrum(S).S1
    dU = scale * step.dU
    dPhi = scale * step.dPhi
    left = np.hstack([U, dU])
    right = np.hstack([V * S - dPhi.T * S1, V])
    Ql, Rl = np.linalg.qr(left)
    Qr, Rr = np.linalg.qr(right)
    u, s, vt = np.linalg.svd(Rl @ Rr.T)
    Un = Ql @ u[:, :r]
    Vn = Qr @ vt[:r].T
    # same sign convention as truncated_svd
    piv = np.argmax(np.abs(Un), axis=0)
    signs = np.sign(Un[piv, np.arange(r)])
    signs[signs == 0] = 1.0
    return FactoredMatrix(Un * signs, s[:r].copy(), Vn * signs)


def retract_qr(p: DensePoint, dA, dY):
    """``Y1 = qf(Y + dY)``, ``A1 = (A + dA)(I - Y1 Y1^T)``."""
    Y1 = thin_qr(p.Y + dY)[0] if p.Y.shape[1] else p.Y.copy()
    A1 = p.A + dA
    A1 = A1 - (A1 @ Y1) @ Y1.T
    return DensePoint(A1, Y1)


def forced_krylov(cfg: NewtonConfig, grad_norm):
    """Inner tolerance ``min(0.1, ||grad||^2)``, floored at the configured one."""
    if not cfg.forcing:
        return cfg.krylov
    rel = max(min(0.1, grad_norm**2), cfg.krylov.rel_tolerance)
    return replace(cfg.krylov, rel_tolerance=rel)


def solve(x0: FactoredMatrix, obj, cfg: NewtonConfig | None = None, callback=None):
    """Pure Newton iteration with SVD retraction.

    Stops when the squared step norm drops below ``cfg.tol`` and the
    projected gradient norm is below ``cfg.grad_tol``, when the iteration
    budget runs out, or when the step norm keeps growing for
    ``cfg.patience`` iterations past ``divergence_factor`` times its
    smallest value.

    Returns
    -------
    SolveResult
        ``status`` is one of ``"converged"``, ``"max_iterations"``,
        ``"diverged"`` or ``"nonfinite"``.
    """
    cfg = cfg or NewtonConfig()
    x = x0
    history = []
    prev = None
    growth = 0
    best = np.inf
    t0 = time.perf_counter()
    status = "max_iterations"
    for it in range(cfg.max_iterations):
        ev = obj.at(x)
        fval = ev.value()
        pg = _projected_gradient_norm(ev, x)
        if pg <= cfg.krylov.abs_tolerance:
            history.append(ConvergenceRecord(it, fval, 0.0, pg, list(x.S), time.perf_counter() - t0))
            status = "converged"
            break
        try:
            step, info = newton_step(x, obj, cfg, krylov=forced_krylov(cfg, pg), evaluator=ev)
        except FloatingPointError:
            status = "nonfinite"
            break
        x = retract_svd(x, step)
        rec = ConvergenceRecord(
            it, fval, info.step_norm, pg, list(x.S), time.perf_counter() - t0,
            info.krylov_iterations, info.krylov_converged,
        )
        history.append(rec)
        if callback is not None:
            callback(rec, x)
        if not np.all(np.isfinite(x.S)):
            status = "nonfinite"
            break
        if info.step_norm <= cfg.tol and pg <= cfg.grad_tol:
            status = "converged"
            break
        best = min(best, info.step_norm)
        growth = growth + 1 if prev is not None and info.step_norm > prev else 0
        if growth >= cfg.patience and info.step_norm > cfg.divergence_factor * max(best, 1e-300):
            status = "diverged"
            break
        prev = info.step_norm
    return SolveResult(x, history, status)
