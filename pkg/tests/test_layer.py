import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pdecl.errors import InputError
from pdecl.layer import (SolutionField, fit_eqqp, fit_linear, fit_nonlinear, infer,
                         normal_solve, vjp_eqqp, vjp_linear)
from pdecl.operators import ConstraintSystem
from pdecl.problems import make_problem
from pdecl.network import init_params
from pdecl.fields import generate_field


def _system(A, b):
    return ConstraintSystem(np.asarray(A, float), np.asarray(b, float), np.zeros((len(b), 2)))


def _dense_omega(A, b):
    return np.linalg.lstsq(A, b, rcond=None)[0]


def _fd_cotangents(A, b, g, h=1e-6):
    cA, cb = np.zeros_like(A), np.zeros_like(b)
    for idx in np.ndindex(A.shape):
        Ap, Am = A.copy(), A.copy()
        Ap[idx] += h
        Am[idx] -= h
        cA[idx] = g @ (_dense_omega(Ap, b) - _dense_omega(Am, b)) / (2 * h)
    for i in range(b.size):
        bp, bm = b.copy(), b.copy()
        bp[i] += h
        bm[i] -= h
        cb[i] = g @ (_dense_omega(A, bp) - _dense_omega(A, bm)) / (2 * h)
    return cA, cb


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_fit_linear_min_norm():
    w = fit_linear(_system([[1.0, 1.0]], [2.0]), tol=1e-12)
    np.testing.assert_allclose(w.omega, [1.0, 1.0], atol=1e-12)


def test_fit_linear_square(rng):
    A = rng.standard_normal((6, 6)) + 4 * np.eye(6)
    b = rng.standard_normal(6)
    w = fit_linear(_system(A, b), tol=1e-13)
    assert _rel(w.omega, np.linalg.solve(A, b)) < 1e-8


def test_fit_linear_overdetermined(rng):
    A = rng.standard_normal((9, 4))
    b = rng.standard_normal(9)
    w = fit_linear(_system(A, b), tol=1e-12)
    assert _rel(w.omega, np.linalg.solve(A.T @ A, A.T @ b)) < 1e-7


def test_fit_linear_stacks_icbc(rng):
    s = ConstraintSystem(rng.standard_normal((2, 5)), np.zeros(2), np.zeros((2, 2)),
                         rng.standard_normal((2, 5)), np.ones(2))
    w = fit_linear(s, tol=1e-12)
    np.testing.assert_allclose(s.icbc_matrix @ w.omega, 1.0, atol=1e-10)


def test_normal_solve_damped(rng):
    A = rng.standard_normal((5, 3))
    g = rng.standard_normal(3)
    x, _ = normal_solve(A, g, tol=1e-12, damping=0.5)
    np.testing.assert_allclose((A.T @ A + 0.5 * np.eye(3)) @ x, g, atol=1e-9)


def test_vjp_identity():
    b = np.array([1.0, 2.0, 3.0])
    g = np.array([0.5, -1.0, 2.0])
    st_ = vjp_linear(_system(np.eye(3), b), b, g, tol=1e-12)
    np.testing.assert_allclose(st_.cotangent_b, g, atol=1e-12)
    np.testing.assert_allclose(st_.cotangent_A, -np.outer(g, b), atol=1e-12)


def test_vjp_consistent_system_has_no_residual_term(rng):
    A = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    w = rng.standard_normal(4)
    b = A @ w
    g = rng.standard_normal(4)
    st_ = vjp_linear(_system(A, b), w, g, tol=1e-12)
    np.testing.assert_allclose(st_.cotangent_A, -np.outer(st_.cotangent_b, w), atol=1e-9)


@pytest.mark.parametrize("shape", [(8, 5), (3, 6), (5, 5)])
def test_vjp_matches_finite_differences(rng, shape):
    A = rng.standard_normal(shape)
    b = rng.standard_normal(shape[0])
    g = rng.standard_normal(shape[1])
    w = fit_linear(_system(A, b), tol=1e-13)
    st_ = vjp_linear(_system(A, b), w, g, tol=1e-13)
    cA, cb = _fd_cotangents(A, b, g)
    assert _rel(st_.cotangent_A, cA) < 1e-5
    assert _rel(st_.cotangent_b, cb) < 1e-5


def test_vjp_damped_matches_finite_differences(rng):
    A = rng.standard_normal((6, 4))
    b = rng.standard_normal(6)
    g = rng.standard_normal(4)
    d = 0.1
    ridge = lambda A_, b_: np.linalg.solve(A_.T @ A_ + d * np.eye(4), A_.T @ b_)
    st_ = vjp_linear(_system(A, b), ridge(A, b), g, tol=1e-13, damping=d)
    h = 1e-6
    E = np.zeros_like(A)
    E[2, 1] = h
    fd = g @ (ridge(A + E, b) - ridge(A - E, b)) / (2 * h)
    assert st_.cotangent_A[2, 1] == pytest.approx(fd, rel=1e-6)


def test_vjp_rejects_wrong_upstream():
    with pytest.raises(InputError):
        vjp_linear(_system(np.eye(2), np.ones(2)), np.ones(2), np.ones(3))


def _dense_kkt(B, y, A, c):
    N, n = B.shape[1], A.shape[0]
    K = np.block([[B.T @ B, A.T], [A, np.zeros((n, n))]])
    return np.linalg.solve(K, np.concatenate([B.T @ y, c]))[:N]


def test_eqqp_empty_constraint_reduces(rng):
    B = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    w = fit_eqqp(B, y, np.zeros((0, 3)), tol=1e-12)
    np.testing.assert_allclose(w.omega, fit_linear(_system(B, y), tol=1e-12).omega, atol=1e-10)


def test_eqqp_square_constraint_forces_zero(rng):
    B = rng.standard_normal((4, 3))
    y = rng.standard_normal(4)
    A = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    w = fit_eqqp(B, y, A, tol=1e-12)
    np.testing.assert_allclose(w.omega, 0.0, atol=1e-9)
    np.testing.assert_allclose(B @ w.omega - y, -y, atol=1e-9)


def test_eqqp_matches_dense_kkt(rng):
    B = rng.standard_normal((4, 6))
    y = rng.standard_normal(4)
    A = rng.standard_normal((3, 6))
    w = fit_eqqp(B, y, A, tol=1e-13)
    assert _rel(w.omega, _dense_kkt(B, y, A, np.zeros(3))) < 1e-7
    c = rng.standard_normal(3)
    w = fit_eqqp(B, y, A, tol=1e-13, constraint_rhs=c)
    assert _rel(w.omega, _dense_kkt(B, y, A, c)) < 1e-7


def test_vjp_eqqp_zero_upstream(rng):
    B, y, A = rng.standard_normal((4, 5)), rng.standard_normal(4), rng.standard_normal((2, 5))
    w = fit_eqqp(B, y, A, tol=1e-12)
    st_ = vjp_eqqp(B, y, A, w, np.zeros(5))
    assert not np.any(st_.cotangent_A) and not np.any(st_.cotangent_B) and not np.any(st_.cotangent_y)


def test_vjp_eqqp_empty_matches_linear(rng):
    B, y, g = rng.standard_normal((7, 4)), rng.standard_normal(7), rng.standard_normal(4)
    w = fit_eqqp(B, y, np.zeros((0, 4)), tol=1e-13)
    a = vjp_eqqp(B, y, np.zeros((0, 4)), w, g, tol=1e-13)
    b = vjp_linear(_system(B, y), w, g, tol=1e-13)
    np.testing.assert_allclose(a.cotangent_B, b.cotangent_A, atol=1e-8)
    np.testing.assert_allclose(a.cotangent_y, b.cotangent_b, atol=1e-8)


def test_vjp_eqqp_matches_finite_differences(rng):
    B, y, A = rng.standard_normal((4, 6)), rng.standard_normal(4), rng.standard_normal((3, 6))
    c = rng.standard_normal(3)
    g = rng.standard_normal(6)
    w = fit_eqqp(B, y, A, tol=1e-13, constraint_rhs=c)
    st_ = vjp_eqqp(B, y, A, w, g, tol=1e-13, constraint_rhs=c)
    h = 1e-6
    f = lambda B_, y_, A_, c_: g @ _dense_kkt(B_, y_, A_, c_)
    for M, cot, pos in ((B, st_.cotangent_B, 0), (A, st_.cotangent_A, 2)):
        fd = np.zeros_like(M)
        for idx in np.ndindex(M.shape):
            Mp, Mm = M.copy(), M.copy()
            Mp[idx] += h
            Mm[idx] -= h
            args_p = [B, y, A, c]
            args_m = [B, y, A, c]
            args_p[pos], args_m[pos] = Mp, Mm
            fd[idx] = (f(*args_p) - f(*args_m)) / (2 * h)
        assert _rel(cot, fd) < 1e-5
    fd_y = np.array([(f(B, y + h * e, A, c) - f(B, y - h * e, A, c)) / (2 * h) for e in np.eye(4)])
    fd_c = np.array([(f(B, y, A, c + h * e) - f(B, y, A, c - h * e)) / (2 * h) for e in np.eye(3)])
    assert _rel(st_.cotangent_y, fd_y) < 1e-5
    assert _rel(st_.cotangent_b, fd_c) < 1e-5


def test_nonlinear_affine_residual(rng):
    A, b = rng.standard_normal((7, 3)), rng.standard_normal(7)
    w = fit_nonlinear(lambda v: (A @ v - b, A), np.zeros(3), tol=1e-10)
    np.testing.assert_allclose(w.omega, np.linalg.lstsq(A, b, rcond=None)[0], atol=1e-8)
    assert w.report.iterations <= 2


def test_nonlinear_scalar_identity():
    w = fit_nonlinear(lambda v: (v.copy(), np.eye(1)), np.array([5.0]), tol=1e-12)
    assert abs(w.omega[0]) < 1e-10


def test_nonlinear_quadratic_root():
    # r(w) = (w0^2 + w1 - 3, w0 - w1 + 1): the root is on a grid search minimum
    def res(v):
        r = np.array([v[0] ** 2 + v[1] - 3, v[0] - v[1] + 1])
        return r, np.array([[2 * v[0], 1.0], [1.0, -1.0]])

    w = fit_nonlinear(res, np.array([0.5, 0.5]), tol=1e-12).omega
    g = np.linspace(-3, 3, 601)
    X, Y = np.meshgrid(g, g, indexing="ij")
    obj = (X ** 2 + Y - 3) ** 2 + (X - Y + 1) ** 2
    obj = np.where(X > 0, obj, np.inf)
    i, j = np.unravel_index(np.argmin(obj), obj.shape)
    # refine the grid minimum by a closed form: w0^2 + w0 - 2 = 0 -> w0 = 1
    assert abs(g[i] - 1.0) < 1e-2 and abs(g[j] - 2.0) < 1e-2
    np.testing.assert_allclose(w, [1.0, 2.0], atol=1e-6)


def test_nonlinear_lsqr_and_cg_agree(rng):
    A, b = rng.standard_normal((6, 3)), rng.standard_normal(6)
    res = lambda v: (A @ v + 0.1 * v ** 3 @ np.ones(3) - b, A + 0.3 * np.outer(np.ones(6), v ** 2))
    w1 = fit_nonlinear(res, np.zeros(3), tol=1e-10, inner="lsqr").omega
    w2 = fit_nonlinear(res, np.zeros(3), tol=1e-10, inner="cg").omega
    np.testing.assert_allclose(w1, w2, atol=1e-6)


def _convection_field(N=12):
    problem = make_problem("convection", n_icbc=0)
    params = init_params((problem.n_inputs, 16, N), seed=0)
    phi = generate_field("convection", 3, (50,))
    return problem, params, phi


def test_infer_underdetermined_fits_exactly():
    problem, params, phi = _convection_field(N=20)
    pts = np.random.default_rng(0).random((8, 2))
    fld = SolutionField(params, None, problem, phi)
    vals, w = infer(fld, pts, 8, seed=0, tol=1e-12)
    A = problem.assemble(params, phi, {"fit": pts}).rows("fit")
    assert np.linalg.norm(A @ w.omega) <= 10 * 1e-12 * max(1.0, 0.0) + 1e-10
    assert vals.shape == (8,)


def test_infer_rejects_empty_subset():
    problem, params, phi = _convection_field()
    with pytest.raises(InputError):
        infer(SolutionField(params, None, problem, phi), np.random.default_rng(0).random((5, 2)), 0)


def test_infer_deterministic():
    problem, params, phi = _convection_field()
    pts = np.random.default_rng(1).random((30, 2))
    a, _ = infer(SolutionField(params, None, problem, phi), pts, 10, seed=4)
    b, _ = infer(SolutionField(params, None, problem, phi), pts, 10, seed=4)
    np.testing.assert_array_equal(a, b)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 10**6))
def test_vjp_b_cotangent_property(m, n, seed):
    # for full-rank systems dL/db = A (A^T A)^+ g
    r = np.random.default_rng(seed)
    A = r.standard_normal((m, n))
    b, g = r.standard_normal(m), r.standard_normal(n)
    w = np.linalg.lstsq(A, b, rcond=None)[0]
    st_ = vjp_linear(_system(A, b), w, g, tol=1e-13)
    np.testing.assert_allclose(st_.cotangent_b, A @ np.linalg.pinv(A.T @ A) @ g, rtol=1e-6, atol=1e-8)
