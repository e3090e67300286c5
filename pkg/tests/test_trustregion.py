import numpy as np
import pytest

from desing.data import random_sparse
from desing.linalg import KrylovConfig, truncated_svd
from desing.newton import NewtonConfig, solve
from desing.objectives import CompletionObjective, SparseApproxObjective
from desing.trustregion import InitStrategy, TrustRegionConfig, power_init, tr_solve
from desing.variety import FactoredMatrix, random_factored


def test_config_validation():
    with pytest.raises(ValueError):
        TrustRegionConfig(shrink=1.5)
    with pytest.raises(ValueError):
        TrustRegionConfig(initial_radius=10.0, max_radius=1.0)
    with pytest.raises(ValueError):
        TrustRegionConfig(eta_accept=0.5)
    with pytest.raises(ValueError):
        InitStrategy("random")
    with pytest.raises(ValueError):
        InitStrategy("power-method", 0)


def test_start_at_solution(rng):
    B = rng.standard_normal((8, 7))
    x = FactoredMatrix(*truncated_svd(B, 3))
    res = tr_solve(x, SparseApproxObjective(B), tr_cfg=TrustRegionConfig(initial_radius=0.5))
    assert res.converged and len(res.history) <= 1
    assert all(h.radius == 0.5 for h in res.history)
    np.testing.assert_allclose(res.x.to_dense(), x.to_dense(), atol=1e-12)


def test_rho_is_one_when_model_is_exact(rng):
    # with r = m the variety is the whole space and F is its own quadratic model
    B = rng.standard_normal((6, 4))
    x0 = random_factored(6, 4, 4, rng, scale=3.0)
    res = tr_solve(x0, SparseApproxObjective(B), tr_cfg=TrustRegionConfig(initial_radius=1e3))
    first = res.history[0]
    assert first.accepted
    assert first.rho == pytest.approx(1.0, abs=1e-8)
    np.testing.assert_allclose(res.x.to_dense(), B, atol=1e-10)


def test_power_init_rank_one_exact(rng):
    u, v = rng.standard_normal(7), rng.standard_normal(5)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    B = 4.0 * np.outer(u, v)
    x = power_init(SparseApproxObjective(B), 1, steps=1, rng=rng)
    assert x.S[0] == pytest.approx(4.0, rel=1e-12)
    np.testing.assert_allclose(x.to_dense(), B, atol=1e-12)


def test_power_init_diagonal():
    B = np.diag([3.0, 2.0, 1.0])
    x = power_init(SparseApproxObjective(B), 2, steps=10, rng=np.random.default_rng(1))
    np.testing.assert_allclose(x.S, [3.0, 2.0], atol=1e-6)
    assert x.is_valid()


def test_power_init_completion_uses_observed_entries(rng):
    M = np.outer(rng.standard_normal(6), rng.standard_normal(5))
    rows, cols = np.nonzero(np.ones((6, 5)))
    obj = CompletionObjective(rows, cols, M[rows, cols], (6, 5))
    x = power_init(obj, 2, steps=5, rng=rng)
    np.testing.assert_allclose(x.to_dense(), M, atol=1e-10)
    assert x.S[1] <= 1e-10


def far_problem(rng, alpha=2.0):
    B = random_sparse(20, 20, 150, rng)
    x0 = FactoredMatrix(*truncated_svd(B.toarray() + alpha * rng.standard_normal((20, 20)), 5))
    return SparseApproxObjective(B), x0, B


def test_monotone_accepted_values_and_radius_bounds(rng):
    for _ in range(3):
        obj, x0, _ = far_problem(rng)
        cfg = TrustRegionConfig()
        res = tr_solve(x0, obj, NewtonConfig(tol=1e-24), cfg)
        values = [h.functional_value for h in res.history]
        # F is non-increasing up to the rounding of F itself
        for a, b in zip(values, values[1:]):
            assert b <= a + 1e-12 * abs(a)
        for h in res.history:
            assert 0 < h.radius <= cfg.max_radius
            assert h.accepted == (h.rho > cfg.eta_accept)


def test_trust_region_reaches_truncated_svd_from_far(rng):
    obj, x0, B = far_problem(rng)
    res = tr_solve(x0, obj, NewtonConfig(tol=1e-24),
                   TrustRegionConfig(max_outer=300))
    assert res.converged
    U, S, V = truncated_svd(B.toarray(), 5)
    assert np.linalg.norm(res.x.to_dense() - (U * S) @ V.T) <= 1e-8 * np.linalg.norm(S)


def test_matches_pure_newton_with_infinite_radius(rng):
    B = rng.standard_normal((9, 8))
    x0 = FactoredMatrix(*truncated_svd(B + 0.05 * rng.standard_normal((9, 8)), 3))
    obj = SparseApproxObjective(B)
    ncfg = NewtonConfig(tol=1e-24, krylov=KrylovConfig(rel_tolerance=1e-14))
    tr = tr_solve(x0, obj, ncfg, TrustRegionConfig(initial_radius=np.inf, max_radius=np.inf, eta_accept=0.0))
    nt = solve(x0, obj, ncfg)
    assert tr.converged and nt.converged
    k = min(len(tr.history), len(nt.history))
    for a, b in zip(tr.history[:k], nt.history[:k]):
        assert a.functional_value == pytest.approx(b.functional_value, rel=1e-8, abs=1e-26)
    np.testing.assert_allclose(tr.x.to_dense(), nt.x.to_dense(), atol=1e-12)


def test_callback_sees_current_iterate(rng):
    obj, x0, _ = far_problem(rng, alpha=0.5)
    seen = []
    res = tr_solve(x0, obj, callback=lambda rec, x: seen.append((rec.accepted, x.is_valid())))
    assert len(seen) == len(res.history)
    assert all(valid for _, valid in seen)
