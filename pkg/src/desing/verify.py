"""Self-contained invariant suites behind the ``verify`` subcommand.

Each check returns a :class:`Check` holding the worst observed defect and
the threshold it is held to, so that a failing run says by how much it
failed.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .linalg import finite_difference_gradient, vec
from .newton import ReducedSystem, newton_step, retract_qr, retract_svd
from .objectives import CompletionObjective, SparseApproxObjective
from .reference import dense_newton_step, dense_system
from .variety import (
    build_N,
    build_Q,
    densify,
    horizontal_projector,
    random_factored,
    verify_sigma_min_bound,
)

__all__ = ["Check", "variety_suite", "newton_suite", "run_all"]


class Check(NamedTuple):
    name: str
    worst: float
    threshold: float

    @property
    def passed(self):
        return bool(np.isfinite(self.worst) and self.worst <= self.threshold)


_SHAPES = [(2, 2, 1), (5, 4, 2), (6, 6, 3), (7, 5, 1), (4, 7, 2), (12, 10, 4)]


def _points(rng, count):
    for k in range(count):
        n, m, r = _SHAPES[k % len(_SHAPES)]
        zeros = int(rng.integers(0, r + 1))
        yield random_factored(n, m, r, rng, zeros=zeros, scale=float(rng.uniform(0.1, 10)))


def variety_suite(rng, count=60):
    """Orthonormality of ``Q``, ``N Q = 0``, the Gram block form of ``N N^T``,
    ``sigma_min(N) >= 1`` and the projector identities, on random points
    whose spectra contain exact zeros."""
    worst = dict(qtq=0.0, nq=0.0, gram=0.0, sigma=0.0, proj=0.0, constraint=0.0)
    for x in _points(rng, count):
        n, m = x.shape
        r = x.rank
        p = densify(x)
        Q = build_Q(x, p.Y)
        N = build_N(p)
        k = m - r
        worst["qtq"] = max(worst["qtq"], np.abs(Q.T @ Q - np.eye(Q.shape[1])).max())
        worst["nq"] = max(worst["nq"], np.abs(N @ Q).max())
        Z = np.zeros((n * k + k * k, n * k + k * k))
        Z[: n * k, : n * k] = np.eye(n * k) + np.kron(np.eye(k), p.A @ p.A.T)
        Z[n * k:, n * k:] = np.eye(k * k)
        worst["gram"] = max(worst["gram"], np.abs(N @ N.T - Z).max() / max(1.0, np.abs(Z).max()))
        worst["sigma"] = max(worst["sigma"], 1.0 - verify_sigma_min_bound(p))
        P = horizontal_projector(p)
        worst["proj"] = max(worst["proj"], np.abs(P - Q @ Q.T).max())
        worst["constraint"] = max(worst["constraint"], *p.constraint_errors())
    return [
        Check("Q^T Q = I", worst["qtq"], 1e-10),
        Check("N Q = 0", worst["nq"], 1e-10),
        Check("N N^T block form", worst["gram"], 1e-10),
        Check("sigma_min(N) >= 1", worst["sigma"], 1e-8),
        Check("projector equals Q Q^T", worst["proj"], 1e-10),
        Check("A Y = 0, Y^T Y = I", worst["constraint"], 1e-10),
    ]


def _objectives(n, m, rng):
    mask = rng.random((n, m)) < 0.6
    rows, cols = np.nonzero(mask)
    yield CompletionObjective(rows, cols, rng.standard_normal(rows.size), (n, m))
    B = np.where(rng.random((n, m)) < 0.5, rng.standard_normal((n, m)), 0.0)
    yield SparseApproxObjective(B)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def newton_suite(rng, count=12):
    """Fast reduced Hessian and right-hand side against the dense assembly,
    symmetry, gauge, gradient finite differences and retraction validity."""
    worst = dict(matvec=0.0, rhs=0.0, step=0.0, sym=0.0, gauge=0.0, fd=0.0, retract=0.0, qr=0.0)
    shapes = [(5, 4, 2), (4, 4, 1), (6, 5, 3), (3, 5, 2)]
    for k in range(count):
        n, m, r = shapes[k % len(shapes)]
        x = random_factored(n, m, r, rng, zeros=int(rng.integers(0, r)), scale=2.0)
        p = densify(x)
        for obj in _objectives(n, m, rng):
            for gn in (False, True):
                sys = ReducedSystem(x, obj, gauss_newton=gn)
                ds = dense_system(x, p.Y, obj, gauss_newton=gn)
                dU = rng.standard_normal((n, r))
                dP = rng.standard_normal((r, m - r))
                L1, L2 = sys.apply(dU, dP @ p.Y.T)
                dense = ds.G_loc @ np.concatenate([vec(dU), vec(dP)])
                fast = np.concatenate([vec(L1), vec(L2 @ p.Y)])
                worst["matvec"] = max(worst["matvec"], _rel(fast, dense))
                g1, g2 = sys.rhs_blocks()
                worst["rhs"] = max(worst["rhs"], _rel(np.concatenate([vec(g1), vec(g2 @ p.Y)]), ds.g))
                # the operator is symmetric on the gauge-fixed subspace
                a, b = (_gauge(sys, v) for v in rng.standard_normal((2, sys.size)))
                Ga, Gb = sys.matvec(a), sys.matvec(b)
                sym = abs(b @ Ga - a @ Gb) / max(np.linalg.norm(a) * np.linalg.norm(Gb), 1e-300)
                worst["sym"] = max(worst["sym"], sym)
                worst["gauge"] = max(worst["gauge"], np.linalg.norm(sys.split(Gb)[1] @ x.V))
            step, _ = newton_step(x, obj)
            dUd, dPd, _ = dense_newton_step(x, p.Y, obj)
            worst["step"] = max(worst["step"], _rel(np.concatenate([vec(step.dU), vec(step.dPhi @ p.Y)]),
                                                    np.concatenate([vec(dUd), vec(dPd)])))
            X = x.to_dense()
            fd = finite_difference_gradient(obj.dense_value, X)
            worst["fd"] = max(worst["fd"], _rel(obj.dense_gradient(X), fd))
            x1 = retract_svd(x, step, 0.5)
            worst["retract"] = max(worst["retract"], x1.orthonormality_error(), float(-min(x1.S.min(), 0.0)),
                                   float(max(np.diff(x1.S).max(initial=0.0), 0.0)))
            dA = rng.standard_normal((n, m))
            p1 = retract_qr(p, dA, rng.standard_normal(p.Y.shape) * 0.1)
            worst["qr"] = max(worst["qr"], *p1.constraint_errors())
    return [
        Check("fast matvec matches dense reduced Hessian", worst["matvec"], 1e-8),
        Check("fast rhs matches dense rhs", worst["rhs"], 1e-8),
        Check("Newton step matches dense solve", worst["step"], 1e-8),
        Check("reduced Hessian symmetric", worst["sym"], 1e-9),
        Check("matvec output satisfies gauge", worst["gauge"], 1e-10),
        Check("gradient matches finite differences", worst["fd"], 1e-6),
        Check("SVD retraction yields valid factors", worst["retract"], 1e-10),
        Check("QR retraction yields valid point", worst["qr"], 1e-10),
    ]


def _gauge(sys, v):
    dU, dPhi = sys.split(v)
    return sys.join(dU, dPhi - (dPhi @ sys.x.V) @ sys.x.V.T)


def run_all(seed=0):
    rng = np.random.default_rng(seed)
    return [("variety", variety_suite(rng)), ("newton", newton_suite(rng))]
