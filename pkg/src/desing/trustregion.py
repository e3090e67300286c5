"""Trust-region globalization of the desingularized Newton step."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .newton import (
    ConvergenceRecord,
    NewtonConfig,
    ReducedSystem,
    SolveResult,
    _projected_gradient_norm,
    forced_krylov,
    retract_svd,
    solve_reduced,
    step_norm,
)
from .objectives import zero_iterate
from .variety import FactoredMatrix, TangentCoords

__all__ = ["TrustRegionConfig", "InitStrategy", "tr_solve", "power_init"]


@dataclass(frozen=True)
class TrustRegionConfig:
    initial_radius: float = 1.0
    max_radius: float = 1e3
    eta_accept: float = 0.1
    shrink: float = 0.25
    grow: float = 2.0
    max_outer: int = 200

    def __post_init__(self):
        if not 0 < self.shrink < 1 < self.grow:
            raise ValueError("need 0 < shrink < 1 < grow")
        if not 0 < self.initial_radius <= self.max_radius:
            raise ValueError("need 0 < initial_radius <= max_radius")
        if not 0 <= self.eta_accept <= 0.25:
            raise ValueError("eta_accept must lie in [0, 1/4]")


@dataclass(frozen=True)
class InitStrategy:
    kind: str = "perturbed-svd"
    power_steps: int = 5

    def __post_init__(self):
        if self.kind not in ("perturbed-svd", "power-method", "user-supplied"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "power-method" and self.power_steps < 1:
            raise ValueError("power_steps must be >= 1")


def power_init(obj, r, steps=5, rng=None):
    """Block power iteration on the data seen through ``-grad F(0)``.

    At the zero iterate the gradient of both objectives is minus the
    (observed) data matrix, so no direct access to the data is needed.
    """
    rng = np.random.default_rng() if rng is None else rng
    n, m = obj.shape
    ev = obj.at(zero_iterate(n, m))
    Qu = np.linalg.qr(rng.standard_normal((n, r)))[0]
    for _ in range(steps):
        Qv = np.linalg.qr(-ev.grad_apply_T(Qu))[0]
        Qu = np.linalg.qr(-ev.grad_apply(Qv))[0]
    Qv = np.linalg.qr(-ev.grad_apply_T(Qu))[0]
    core = -(ev.grad_apply_T(Qu).T @ Qv)
    a, s, bt = np.linalg.svd(core)
    U, V = Qu @ a, Qv @ bt.T
    piv = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[piv, np.arange(r)])
    signs[signs == 0] = 1.0
    return FactoredMatrix(U * signs, s, V * signs)


def _negative_curvature(res, rtol=1e-8):
    """Unit Ritz vector of the most negative Ritz value of the last GMRES cycle."""
    if res.basis is None or res.basis.shape[0] == 0:
        return None
    k = res.basis.shape[0]
    T = res.hessenberg[:k, :k]
    evals, evecs = np.linalg.eigh(0.5 * (T + T.T))
    if evals[0] >= -rtol * max(np.max(np.abs(evals)), 1e-300):
        return None
    z = res.basis.T @ evecs[:, 0]
    return z / np.linalg.norm(z)


def _as_step(sys, d):
    dU, dPhi = sys.split(d)
    return TangentCoords(dU, dPhi - (dPhi @ sys.x.V) @ sys.x.V.T)


def _cauchy_step(sys, g, radius):
    # steepest descent on the model, cut at the radius
    Gg = sys.matvec(g)
    dU, dPhi = sys.split(g)
    gnorm = np.sqrt(step_norm(sys.x, TangentCoords(dU, dPhi)))
    curv = float(g @ Gg)
    t = np.inf if curv <= 0 else float(g @ g) / curv
    if gnorm > 0:
        t = min(t, radius / gnorm)
    if not np.isfinite(t):
        t = 1.0
    return t * g


def tr_solve(x0: FactoredMatrix, obj, newton_cfg: NewtonConfig | None = None,
             tr_cfg: TrustRegionConfig | None = None, callback=None):
    """Newton with a boundary-scaled trust region.

    The Newton direction is scaled back to the radius (measured by
    ``||dA||_F``) when it is too long. If the Ritz values of the Krylov
    solve reveal negative curvature, a step of length ``radius`` along the
    most negative Ritz vector competes with it and the one with the larger
    model decrease is taken; the Cauchy point is the last resort when
    neither decreases the model. Acceptance uses
    ``rho = actual / predicted`` decrease. Where the model is convex the
    iterates coincide with :func:`desing.newton.solve` for an infinite
    radius.
    """
    ncfg = newton_cfg or NewtonConfig()
    cfg = tr_cfg or TrustRegionConfig()
    x = x0
    radius = cfg.initial_radius
    history = []
    status = "max_iterations"
    t0 = time.perf_counter()
    ev = obj.at(x)
    fval = ev.value()
    cached = None
    for it in range(cfg.max_outer):
        if cached is None:
            pg = _projected_gradient_norm(ev, x)
            if pg <= ncfg.krylov.abs_tolerance:
                history.append(ConvergenceRecord(it, fval, 0.0, pg, list(x.S), time.perf_counter() - t0, radius=radius))
                status = "converged"
                break
            sys = ReducedSystem(x, obj, gauss_newton=ncfg.hessian == "gauss-newton", evaluator=ev)
            try:
                newton, d, res = solve_reduced(sys, forced_krylov(ncfg, pg))
            except FloatingPointError:
                status = "nonfinite"
                break
            g = sys.rhs()
            full_norm2 = step_norm(x, newton)
            z = _negative_curvature(res)
            # a rejected step leaves x unchanged, so all of this is reused
            cached = (pg, sys, newton, d, res, g, full_norm2, z)
        pg, sys, newton, d, res, g, full_norm2, z = cached
        step, scale = newton, 1.0
        if np.sqrt(full_norm2) > radius:
            scale = radius / np.sqrt(full_norm2)
        pred = sys.model_decrease(scale * d, g)
        if z is not None:
            zr = radius * z if g @ z >= 0 else -radius * z
            pred_z = sys.model_decrease(zr, g)
            if pred_z > pred:
                step, scale, pred = _as_step(sys, zr), 1.0, pred_z
        if not pred > 0:
            c = _cauchy_step(sys, g, radius)
            step, scale, pred = _as_step(sys, c), 1.0, sys.model_decrease(c, g)
        x_new = retract_svd(x, step, scale)
        ev_new = obj.at(x_new)
        f_new = ev_new.value()
        actual = fval - f_new
        noise = 1e-13 * max(abs(fval), 1e-300)
        if abs(actual) <= noise and abs(pred) <= noise:
            # both changes are at rounding level: F can no longer tell the
            # model is wrong, and refusing would stall short of the solution
            rho = 1.0
        elif pred > 0:
            rho = actual / pred
        else:
            rho = -np.inf
        taken = scale * scale * step_norm(x, step)
        accepted = bool(rho > cfg.eta_accept) and np.isfinite(f_new)
        on_boundary = scale < 1.0
        if rho < 0.25:
            radius = cfg.shrink * radius
        elif rho > 0.75 and on_boundary:
            radius = min(cfg.grow * radius, cfg.max_radius)
        rec = ConvergenceRecord(
            it, fval, taken, pg, list((x_new if accepted else x).S), time.perf_counter() - t0,
            res.iterations, res.converged, radius, float(rho), accepted,
        )
        history.append(rec)
        if callback is not None:
            callback(rec, x_new if accepted else x)
        if accepted:
            x, ev, fval = x_new, ev_new, f_new
            cached = None
        # a full Newton step below tolerance means the model has nothing
        # left to offer, whether or not rounding let the step be accepted
        if min(taken if accepted else np.inf, full_norm2) <= ncfg.tol and pg <= ncfg.grad_tol:
            status = "converged"
            break
        if radius * radius <= ncfg.tol and pg <= ncfg.grad_tol:
            # no admissible step is longer than the tolerance any more
            status = "converged"
            break
        if radius < 1e-300:
            status = "stalled"
            break
    return SolveResult(x, history, status)
