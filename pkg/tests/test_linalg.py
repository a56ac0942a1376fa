import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdecl.errors import InputError
from pdecl.linalg import (cg_solve, central_difference_gradient, finite_difference_check, gmres_solve,
                          lstsq_solve, relative_discrepancy)


def test_lstsq_identity():
    x, rep = lstsq_solve(np.eye(2), np.array([1.0, 2.0]))
    np.testing.assert_allclose(x, [1.0, 2.0], atol=1e-12)
    assert rep.converged


def test_lstsq_minimum_norm():
    x, _ = lstsq_solve(np.array([[1.0, 1.0]]), np.array([2.0]))
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)


def test_lstsq_matches_cholesky(rng):
    A = rng.standard_normal((5, 3))
    b = rng.standard_normal(5)
    L = np.linalg.cholesky(A.T @ A)
    ref = np.linalg.solve(L.T, np.linalg.solve(L, A.T @ b))
    x, _ = lstsq_solve(A, b, tol=1e-12)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_lstsq_damping_matches_ridge(rng):
    A = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    ref = np.linalg.solve(A.T @ A + 0.3 * np.eye(4), A.T @ b)
    x, _ = lstsq_solve(A, b, tol=1e-12, damping=0.3)
    np.testing.assert_allclose(x, ref, rtol=1e-9)


def test_lstsq_zero_rhs():
    x, rep = lstsq_solve(np.ones((3, 2)), np.zeros(3))
    assert rep.iterations == 0 and not np.any(x)


@pytest.mark.parametrize("bad", [np.array([[np.nan]]), np.zeros((0, 2))])
def test_lstsq_rejects_bad_matrix(bad):
    with pytest.raises(InputError):
        lstsq_solve(bad, np.zeros(bad.shape[0]))


def test_gmres_identity_one_iteration():
    x, rep = gmres_solve(np.eye(4), np.arange(1.0, 5.0))
    np.testing.assert_allclose(x, np.arange(1.0, 5.0))
    assert rep.iterations == 1


def test_gmres_diagonal():
    x, _ = gmres_solve(np.diag([1.0, 2.0]), np.array([2.0, 2.0]))
    np.testing.assert_allclose(x, [2.0, 1.0], atol=1e-12)


def test_gmres_matches_lu(rng):
    A = rng.standard_normal((10, 10)) + 10 * np.eye(10)
    b = rng.standard_normal(10)
    x, rep = gmres_solve(A, b, tol=1e-12)
    ref = np.linalg.solve(A, b)
    assert rep.converged
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_gmres_callable_operator(rng):
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    b = rng.standard_normal(6)
    x, _ = gmres_solve(lambda v: A @ v, b, tol=1e-12)
    np.testing.assert_allclose(A @ x, b, atol=1e-10)


def test_cg_scaled_identity():
    x, _ = cg_solve(4 * np.eye(2), np.array([8.0, 8.0]))
    np.testing.assert_allclose(x, [2.0, 2.0])


def test_cg_zero_rhs():
    x, rep = cg_solve(np.eye(3), np.zeros(3))
    assert rep.iterations == 0 and not np.any(x)


def _laplacian_2d(n):
    T = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    return np.kron(T, np.eye(n)) + np.kron(np.eye(n), T)


def test_cg_laplacian_matches_dense(rng):
    L = _laplacian_2d(8)
    b = rng.standard_normal(64)
    x, rep = cg_solve(L, b, tol=1e-12)
    ref = np.linalg.solve(L, b)
    assert rep.converged
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) < 1e-8


def test_fd_check_square():
    assert finite_difference_check(lambda x: float(x[0] ** 2), np.array([6.0]), np.array([3.0]), 1e-4) < 1e-6


def test_fd_check_constant():
    assert finite_difference_check(lambda x: 1.5, np.zeros(3), np.ones(3)) == 0.0


def test_fd_check_quadratic_form(rng):
    M = rng.standard_normal((5, 5))
    Q = M + M.T
    x0 = rng.standard_normal(5)
    assert finite_difference_check(lambda x: float(0.5 * x @ Q @ x), Q @ x0, x0) < 1e-6


def test_fd_check_detects_wrong_gradient():
    assert finite_difference_check(lambda x: float(x @ x), np.array([1.0, 0.0]), np.array([1.0, 1.0])) > 0.1


def test_central_difference_rejects_nonfinite():
    with pytest.raises(InputError):
        central_difference_gradient(lambda x: np.inf, np.zeros(1))


def test_relative_discrepancy_zero():
    assert relative_discrepancy(np.zeros(3), np.zeros(3)) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_lstsq_normal_equations_property(m, n, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((m, n))
    b = r.standard_normal(m)
    x, _ = lstsq_solve(A, b, tol=1e-12)
    ref = np.linalg.lstsq(A, b, rcond=None)[0]
    assert np.linalg.norm(x - ref) <= 1e-7 * max(1.0, np.linalg.norm(ref))
