"""Dense Krylov solvers and derivative checks.

All solvers work in float64, never raise on non-convergence (the returned
:class:`SolveReport` says so) and are deterministic for a fixed BLAS thread
count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import InputError

Operator = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]

_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class SolveReport:
    """Outcome of an iterative solve.

    ``final_residual_norm`` is measured on the system the method actually
    solves: the normal equations for least squares, ``Ax = b`` otherwise.
    ``rhs_norm`` is the matching right-hand-side norm, so convergence means
    ``final_residual_norm <= tol * rhs_norm``.
    """

    iterations: int
    final_residual_norm: float
    converged: bool
    method: str = ""
    tol: float = 0.0
    rhs_norm: float = 0.0
    residual_norm: float = 0.0


def _as_vector(b, name="b") -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise InputError(f"{name} contains non-finite entries")
    return b


def _as_matrix(A, name="A") -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise InputError(f"{name} must be a non-empty matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} contains non-finite entries")
    return A


def as_operator(op: Operator, size: int) -> Callable[[np.ndarray], np.ndarray]:
    if callable(op):
        return op
    M = _as_matrix(op, "operator")
    if M.shape != (size, size):
        raise InputError(f"operator has shape {M.shape}, expected {(size, size)}")
    return lambda v: M @ v


def _orthogonalize(Q: np.ndarray, k: int, w: np.ndarray) -> np.ndarray:
    # Two passes of classical Gram-Schmidt against the first k rows of Q.
    if k == 0:
        return w
    B = Q[:k]
    w = w - B.T @ (B @ w)
    return w - B.T @ (B @ w)


def lstsq_solve(A, b, tol: float = 1e-8, max_iter: int | None = None,
                damping: float = 0.0, reorthogonalize: bool = True):
    """Damped least squares by LSQR (Golub-Kahan bidiagonalization).

    Minimizes ``||A x - b||^2 + damping * ||x||^2``. Started from zero, the
    iterates stay in the row space of ``A``, so underdetermined consistent
    systems yield the minimum-norm solution.

    With ``reorthogonalize`` both Lanczos bases are kept orthogonal, which
    makes the method behave like a direct solver on the small, badly
    conditioned matrices produced by neural bases.

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``final_residual_norm`` is ``||A^T (A x - b) + damping x||``.
    """
    A = _as_matrix(A)
    b = _as_vector(b)
    m, n = A.shape
    if b.shape[0] != m:
        raise InputError(f"b has length {b.shape[0]}, expected {m}")
    if not tol > 0:
        raise InputError("tol must be positive")
    if not damping >= 0 or not np.isfinite(damping):
        raise InputError("damping must be a finite non-negative number")
    if max_iter is None:
        max_iter = 10 * max(m, n)

    x = np.zeros(n)
    b_norm = float(np.linalg.norm(b))
    atb_norm = float(np.linalg.norm(A.T @ b))
    method = "lsqr+reorth" if reorthogonalize else "lsqr"
    if atb_norm == 0.0:
        return x, SolveReport(0, 0.0, True, method, tol, 0.0, b_norm)

    a_norm = float(np.sqrt(np.sum(A * A) + n * damping))
    damp = np.sqrt(damping)
    tiny = 10 * _EPS * max(a_norm, _EPS)

    cap = min(max_iter, max(m, n)) + 2 if reorthogonalize else 0
    U = np.empty((cap, m))
    V = np.empty((cap, n))

    beta = b_norm
    u = b / beta
    v = A.T @ u
    alpha = float(np.linalg.norm(v))
    v = v / alpha
    nu = nv = 0
    if reorthogonalize:
        U[0], V[0] = u, v
        nu = nv = 1
    w = v.copy()
    phibar, rhobar = beta, alpha

    # undamped wide systems are consistent in exact arithmetic: stop on the
    # residual itself, since A^T r is tiny along small singular directions
    consistent = damping == 0.0 and m <= n
    normal = atb_norm
    r_norm = b_norm
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = A @ v - alpha * u
        if reorthogonalize:
            u = _orthogonalize(U, nu, u)
        beta = float(np.linalg.norm(u))
        if beta > tiny:
            u = u / beta
            if reorthogonalize and nu < cap:
                U[nu] = u
                nu += 1
        else:
            beta = 0.0
            u = np.zeros(m)

        rhobar1 = np.hypot(rhobar, damp)
        cs1 = rhobar / rhobar1
        phibar = cs1 * phibar

        v_new = A.T @ u - beta * v
        if reorthogonalize:
            v_new = _orthogonalize(V, nv, v_new)
        alpha = float(np.linalg.norm(v_new))
        if alpha > tiny:
            v_new = v_new / alpha
            if reorthogonalize and nv < cap:
                V[nv] = v_new
                nv += 1
        else:
            alpha = 0.0

        rho = np.hypot(rhobar1, beta)
        cs = rhobar1 / rho
        sn = beta / rho
        theta = sn * alpha
        rhobar = -cs * alpha
        phi = cs * phibar
        phibar = sn * phibar

        x = x + (phi / rho) * w
        w = v_new - (theta / rho) * w
        v = v_new

        res = A @ x - b
        r_norm = float(np.sqrt(res @ res + damping * (x @ x)))
        normal = float(np.linalg.norm(A.T @ res + damping * x))
        if normal <= tol * atb_norm and (
                r_norm <= tol * b_norm or (not consistent and normal <= tol * a_norm * r_norm)):
            converged = True
            break
        if alpha == 0.0 or (beta == 0.0 and damping == 0.0):
            # Krylov space exhausted; x is final.
            break

    return x, SolveReport(it, normal, converged, method, tol, atb_norm, r_norm)


def gmres_solve(operator: Operator, b, tol: float = 1e-8, max_iter: int | None = None,
                restart: int | None = None, x0=None):
    """Restarted GMRES with Givens rotations and re-orthogonalized Arnoldi.

    ``max_iter`` bounds the total number of Arnoldi steps over all cycles.
    """
    b = _as_vector(b)
    m = b.shape[0]
    if not tol > 0:
        raise InputError("tol must be positive")
    op = as_operator(operator, m)
    if max_iter is None:
        max_iter = 10 * m
    if restart is None:
        restart = min(m, 500)
    restart = max(1, min(restart, m))

    x = np.zeros(m) if x0 is None else _as_vector(x0, "x0").copy()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(m), SolveReport(0, 0.0, True, "gmres", tol, 0.0, 0.0)
    target = tol * b_norm

    r = b - op(x)
    r_norm = float(np.linalg.norm(r))
    total = 0
    Q = np.empty((restart + 1, m))
    H = np.zeros((restart + 1, restart))
    while r_norm > target and total < max_iter:
        Q[0] = r / r_norm
        H[:] = 0.0
        g = np.zeros(restart + 1)
        g[0] = r_norm
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        k_used = 0
        for k in range(restart):
            if total >= max_iter:
                break
            total += 1
            w = op(Q[k])
            coeff = Q[:k + 1] @ w
            w = w - Q[:k + 1].T @ coeff
            corr = Q[:k + 1] @ w
            w = w - Q[:k + 1].T @ corr
            H[:k + 1, k] = coeff + corr
            h_next = float(np.linalg.norm(w))
            H[k + 1, k] = h_next
            for j in range(k):
                t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
                H[j, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k_used = k + 1
            breakdown = h_next <= 10 * _EPS * max(1.0, abs(denom))
            if not breakdown:
                Q[k + 1] = w / h_next
            if abs(g[k + 1]) <= target or breakdown:
                break
        if k_used == 0:
            break
        y = _back_substitute(H[:k_used, :k_used], g[:k_used])
        x = x + Q[:k_used].T @ y
        r = b - op(x)
        new_norm = float(np.linalg.norm(r))
        stalled = new_norm >= r_norm * (1 - 1e-12)
        r_norm = new_norm
        if stalled and k_used < restart:
            break
    converged = r_norm <= target
    return x, SolveReport(total, r_norm, converged, "gmres", tol, b_norm, r_norm)


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = R.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        d = R[i, i]
        s = g[i] - R[i, i + 1:] @ y[i + 1:]
        y[i] = s / d if d != 0.0 else 0.0
    return y


def cg_solve(spd_operator: Operator, b, tol: float = 1e-8, max_iter: int | None = None, x0=None):
    """Conjugate gradients; returns the iterate with the smallest residual."""
    b = _as_vector(b)
    m = b.shape[0]
    if not tol > 0:
        raise InputError("tol must be positive")
    op = as_operator(spd_operator, m)
    if max_iter is None:
        max_iter = 10 * m
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(m), SolveReport(0, 0.0, True, "cg", tol, 0.0, 0.0)
    target = tol * b_norm

    x = np.zeros(m) if x0 is None else _as_vector(x0, "x0").copy()
    r = b - op(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = float(r @ r)
    best_x, best_norm = x.copy(), np.sqrt(rr)
    it = 0
    while np.sqrt(rr) > target and it < max_iter:
        Ap = op(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break
        step = rr / pAp
        x = x + step * p
        r = r - step * Ap
        rr_new = float(r @ r)
        it += 1
        if np.sqrt(rr_new) < best_norm:
            best_x, best_norm = x.copy(), np.sqrt(rr_new)
        p = r + (rr_new / rr) * p
        rr = rr_new
    true_norm = float(np.linalg.norm(b - op(best_x)))
    return best_x, SolveReport(it, true_norm, true_norm <= target, "cg", tol, b_norm, true_norm)


def central_difference_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise InputError(f"f is not finite near coordinate {i}")
        g.flat[i] = (fp - fm) / (2 * step)
    return g


def relative_discrepancy(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


def finite_difference_check(f: Callable[[np.ndarray], float], grad, x, step: float = 1e-5) -> float:
    """Max discrepancy between ``grad`` and a central-difference gradient of ``f``.

    The discrepancy is measured in the max norm, relative to the larger of the
    two gradients' max norms; it is 0 when both vanish.
    """
    if not step > 0:
        raise InputError("step must be positive")
    x = _as_vector(np.ravel(x), "x")
    grad = _as_vector(np.ravel(grad), "grad")
    if grad.shape != x.shape:
        raise InputError("grad and x must have the same length")
    return relative_discrepancy(grad, central_difference_gradient(f, x, step))
