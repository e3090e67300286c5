import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from desing.linalg import (
    KrylovConfig,
    RankDeficientError,
    check_linearity,
    finite_difference_gradient,
    gmres_solve,
    mat,
    sparse_from_triplets,
    thin_qr,
    transposition_matrix,
    transposition_permutation,
    truncated_svd,
    vec,
)

dims = st.integers(min_value=1, max_value=7)


def test_vec_stacks_columns():
    np.testing.assert_array_equal(vec(np.array([[1, 3], [2, 4]])), [1, 2, 3, 4])


@given(dims, dims, st.integers(0, 2**32 - 1))
def test_vec_mat_round_trip(n, m, seed):
    M = np.random.default_rng(seed).standard_normal((n, m))
    np.testing.assert_array_equal(mat(vec(M), n, m), M)


def test_mat_rejects_wrong_length():
    with pytest.raises(ValueError):
        mat(np.arange(5.0), 2, 3)


def test_vec_of_kron_product(rng):
    A, X, B = rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal((5, 2))
    np.testing.assert_allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X), atol=1e-12)


def test_transposition_2x2_brute_force(rng):
    # enumerate the permutation on 2x2 directly: it swaps the off-diagonal slots
    T = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=float)
    np.testing.assert_array_equal(transposition_matrix(2, 2).toarray(), T)
    M = rng.standard_normal((2, 2))
    np.testing.assert_array_equal(vec(M.T), T @ vec(M))


def test_transposition_row_vector_is_identity():
    for n in (1, 4, 7):
        np.testing.assert_array_equal(transposition_matrix(1, n).toarray(), np.eye(n))


@given(dims, dims, st.integers(0, 2**32 - 1))
def test_transposition_operator(m, n, seed):
    X = np.random.default_rng(seed).standard_normal((m, n))
    T = transposition_permutation(m, n)
    np.testing.assert_array_equal(T.matvec(vec(X)), vec(X.T))
    # involution and orthogonality
    np.testing.assert_array_equal(transposition_permutation(n, m).matvec(T.matvec(vec(X))), vec(X))
    np.testing.assert_array_equal(T.rmatvec(vec(X.T)), vec(X))


def test_truncated_svd_identity():
    U, S, V = truncated_svd(np.eye(3), 2)
    np.testing.assert_allclose(S, [1.0, 1.0])


def test_truncated_svd_rank_one(rng):
    u = rng.standard_normal(5)
    v = rng.standard_normal(4)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    U, S, V = truncated_svd(np.outer(u, v), 1)
    np.testing.assert_allclose(S, [1.0], atol=1e-14)
    np.testing.assert_allclose((U * S) @ V.T, np.outer(u, v), atol=1e-14)


def test_truncated_svd_discarded_energy(rng):
    A = rng.standard_normal((6, 5))
    U, S, V = truncated_svd(A, 2)
    lam = np.sort(np.linalg.eigvalsh(A.T @ A))[::-1]
    err = np.linalg.norm(A - (U * S) @ V.T) ** 2
    np.testing.assert_allclose(err, lam[2:].sum(), rtol=1e-10)


def test_truncated_svd_matches_eigen_oracle(rng):
    for _ in range(10):
        A = rng.standard_normal((8, 6))
        _, S, _ = truncated_svd(A, 6)
        lam = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(A.T @ A))[::-1], 0, None))
        np.testing.assert_allclose(S, lam, rtol=1e-10)


def test_truncated_svd_keeps_exact_zeros():
    A = np.zeros((4, 3))
    A[0, 0] = 2.0
    U, S, V = truncated_svd(A, 3)
    assert S[0] == 2.0
    assert np.all(S[1:] <= 1e-300)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)


def test_truncated_svd_sign_convention(rng):
    U, S, V = truncated_svd(rng.standard_normal((7, 5)), 3)
    piv = np.argmax(np.abs(U), axis=0)
    assert np.all(U[piv, np.arange(3)] > 0)


def test_truncated_svd_rank_out_of_range(rng):
    with pytest.raises(ValueError):
        truncated_svd(rng.standard_normal((3, 4)), 4)
    with pytest.raises(ValueError):
        truncated_svd(rng.standard_normal((3, 4)), -1)


def test_thin_qr_properties(rng):
    M = rng.standard_normal((20, 5))
    Q, R = thin_qr(M)
    np.testing.assert_allclose(Q.T @ Q, np.eye(5), atol=1e-12)
    assert np.linalg.norm(Q @ R - M) <= 1e-12 * np.linalg.norm(M)
    assert np.all(np.diag(R) > 0)
    np.testing.assert_array_equal(np.tril(R, -1), 0)


def test_thin_qr_of_orthonormal_input(rng):
    Q0 = np.linalg.qr(rng.standard_normal((6, 3)))[0]
    Q, R = thin_qr(Q0)
    np.testing.assert_allclose(np.abs(Q), np.abs(Q0), atol=1e-12)
    np.testing.assert_allclose(R, np.eye(3), atol=1e-12)


def test_thin_qr_deterministic(rng):
    M = rng.standard_normal((9, 4))
    Q1, R1 = thin_qr(M)
    Q2, R2 = thin_qr(M.copy())
    assert np.array_equal(Q1, Q2) and np.array_equal(R1, R2)


def test_thin_qr_rank_deficient(rng):
    M = rng.standard_normal((6, 3))
    M[:, 2] = M[:, 0] + M[:, 1]
    with pytest.raises(RankDeficientError):
        thin_qr(M)


def test_krylov_config_validation():
    with pytest.raises(ValueError):
        KrylovConfig(rel_tolerance=0.0)
    with pytest.raises(ValueError):
        KrylovConfig(abs_tolerance=-1.0)
    with pytest.raises(ValueError):
        KrylovConfig(max_iterations=10, restart=20)


def test_gmres_identity():
    b = np.array([1.0, -2.0, 3.0])
    res = gmres_solve(np.eye(3), b)
    np.testing.assert_allclose(res.x, b)
    assert res.converged and res.iterations == 1


def test_gmres_diagonal():
    res = gmres_solve(np.diag([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(res.x, [1.0, 1.0, 1.0], atol=1e-12)


def test_gmres_singular_consistent():
    res = gmres_solve(np.diag([1.0, 1.0, 0.0]), np.array([1.0, 1.0, 0.0]))
    assert res.converged
    np.testing.assert_allclose(res.x, [1.0, 1.0, 0.0], atol=1e-14)
    assert res.x[2] == 0.0


def test_gmres_spd_50(rng):
    A = rng.standard_normal((50, 50))
    A = A @ A.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    res = gmres_solve(A, b, KrylovConfig(max_iterations=50, restart=50))
    assert res.converged and res.iterations <= 50
    assert np.linalg.norm(A @ res.x - b) <= 1e-10 * np.linalg.norm(b)


def test_gmres_restarted_nonsymmetric(rng):
    A = np.eye(80) + 0.3 * rng.standard_normal((80, 80)) / np.sqrt(80)
    b = rng.standard_normal(80)
    res = gmres_solve(A, b, KrylovConfig(max_iterations=400, restart=10))
    assert res.converged
    assert np.linalg.norm(A @ res.x - b) <= 1e-10 * np.linalg.norm(b)
    # residual history is nonincreasing within each cycle and overall best is kept
    assert res.residuals[-1] <= res.residuals[0]


def test_gmres_budget_is_soft_flag(rng):
    A = np.diag(np.linspace(1e-6, 1.0, 200))
    b = rng.standard_normal(200)
    res = gmres_solve(A, b, KrylovConfig(max_iterations=5, restart=5))
    assert not res.converged
    assert res.iterations == 5
    assert np.all(np.isfinite(res.x))


def test_gmres_zero_rhs():
    res = gmres_solve(np.eye(4), np.zeros(4))
    assert res.converged and res.iterations == 0
    np.testing.assert_array_equal(res.x, 0.0)


def test_gmres_nonfinite_matvec():
    with pytest.raises(FloatingPointError):
        gmres_solve(lambda v: v * np.nan, np.ones(3))


def test_gmres_shape_mismatch():
    with pytest.raises(ValueError):
        gmres_solve(np.eye(3), np.ones(4))


def test_fd_quadratic():
    g = finite_difference_gradient(lambda x: 0.5 * x @ x, np.array([1.0, 2.0]), h=1e-5)
    np.testing.assert_allclose(g, [1.0, 2.0], atol=1e-8)


def test_fd_constant():
    np.testing.assert_array_equal(finite_difference_gradient(lambda x: 3.0, np.ones(4)), 0.0)


def test_fd_rejects_nonpositive_step():
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, np.ones(2), h=0.0)


def test_sparse_from_triplets():
    B = sparse_from_triplets([0, 1], [0, 2], [5.0, 4.0], (2, 3))
    assert sp.issparse(B) and B.shape == (2, 3)
    np.testing.assert_array_equal(B.toarray(), [[5, 0, 0], [0, 0, 4]])
    with pytest.raises(ValueError, match="duplicate"):
        sparse_from_triplets([0, 0], [1, 1], [1.0, 2.0], (2, 2))
    with pytest.raises(ValueError, match="range"):
        sparse_from_triplets([2], [0], [1.0], (2, 2))


def test_linear_operator_linearity(rng):
    A = rng.standard_normal((6, 6))
    assert check_linearity(lambda v: A @ v, 6, rng) <= 1e-12
    assert check_linearity(lambda v: v**2, 6, rng) > 1e-3
