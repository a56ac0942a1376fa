"""The PDE-constrained layer: forward fits and implicit backward passes.

Backward passes never unroll solver iterations. They differentiate the
optimality conditions of the fitted problem:

* least squares, ``omega = A^+ b`` (or the ridge solution when damped);
* the KKT system of the equality-constrained quadratic program;
* the stationarity condition ``J^T r = 0`` of nonlinear least squares.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .linalg import SolveReport, gmres_solve, lstsq_solve, cg_solve
from .operators import ConstraintSystem

FIT_MODES = ("linear", "eqqp", "nonlinear")
KKT_FALLBACK_DAMPING = 1e-10


@dataclass
class CombinationWeights:
    omega: np.ndarray
    report: SolveReport
    fit_mode: str
    multipliers: np.ndarray | None = None


@dataclass
class AdjointState:
    """Implicit-gradient results.

    For least squares ``cotangent_A``/``cotangent_b`` belong to the stacked
    system. For the QP they belong to the constraint rows, and
    ``cotangent_B``/``cotangent_y`` to the quadratic loss.
    """

    lam: np.ndarray
    cotangent_A: np.ndarray
    cotangent_b: np.ndarray
    cotangent_B: np.ndarray | None = None
    cotangent_y: np.ndarray | None = None
    report: SolveReport | None = None


# ----------------------------------------------------------------------------
# least squares

def fit_linear(system: ConstraintSystem, tol: float = 1e-8, damping: float = 0.0,
               max_iter: int | None = None) -> CombinationWeights:
    """Weights minimizing ``||A w - b||^2 (+ damping ||w||^2)`` over the stacked rows."""
    A, b = system.stacked()
    omega, report = lstsq_solve(A, b, tol=tol, max_iter=max_iter, damping=damping)
    return CombinationWeights(omega, report, "linear")


def normal_solve(A: np.ndarray, g: np.ndarray, tol: float = 1e-10, damping: float = 0.0):
    """Minimum-norm solution of ``(A^T A + damping I) x = g``.

    Factored as two least-squares solves, ``z = A~^+T g`` then
    ``x = A~^+ z`` with ``A~ = [A; sqrt(damping) I]``; this never forms
    ``A^T A`` and so keeps the conditioning of ``A``.
    """
    if damping > 0:
        A = np.vstack([A, np.sqrt(damping) * np.eye(A.shape[1])])
    z, rep1 = lstsq_solve(A.T, g, tol=tol)
    x, rep2 = lstsq_solve(A, z, tol=tol)
    report = SolveReport(rep1.iterations + rep2.iterations, rep2.final_residual_norm,
                         rep1.converged and rep2.converged, "normal-lsqr", tol,
                         rep2.rhs_norm, rep2.residual_norm)
    return x, report


def vjp_linear(system: ConstraintSystem, omega: CombinationWeights | np.ndarray, upstream,
               tol: float = 1e-10, damping: float = 0.0) -> AdjointState:
    """Pull ``upstream = dL/domega`` back to the stacked ``A`` and ``b``.

    With ``lam = (A^T A + damping I)^+ upstream`` and ``r = A omega - b``::

        dL/db = A lam
        dL/dA = -(r lam^T + A lam omega^T) + (A kappa) ((I - P) upstream)^T

    where ``kappa = (A^T A)^+ omega`` and ``P`` projects onto the row space of
    ``A``. The last term only appears without damping on rank-deficient
    (e.g. underdetermined) systems, where the minimum-norm solution also
    moves within the row space as ``A`` changes.
    """
    w = omega.omega if isinstance(omega, CombinationWeights) else np.asarray(omega, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    A, b = system.stacked()
    if g.shape != (A.shape[1],):
        raise InputError(f"upstream must have length {A.shape[1]}")
    r = A @ w - b
    lam, report = normal_solve(A, g, tol, damping)
    Alam = A @ lam
    cot_A = -(np.outer(r, lam) + np.outer(Alam, w))
    if damping == 0.0 and np.any(g):
        Pg, _ = lstsq_solve(A, A @ g, tol=tol)
        q = g - Pg
        if np.linalg.norm(q) > 0:
            kappa, _ = normal_solve(A, w, tol)
            cot_A = cot_A + np.outer(A @ kappa, q)
    return AdjointState(lam, cot_A, Alam, report=report)


def split_rows(system: ConstraintSystem, stacked: np.ndarray):
    """Split a stacked-row array into (interior, icbc) parts."""
    n = system.matrix.shape[0]
    return stacked[:n], stacked[n:]


# ----------------------------------------------------------------------------
# equality-constrained QP

def _kkt_operator(B, A, eps):
    N = B.shape[1]

    def op(v):
        w, mu = v[:N], v[N:]
        top = B.T @ (B @ w) + A.T @ mu + eps * w
        bottom = A @ w - eps * mu
        return np.concatenate([top, bottom])

    return op


def fit_eqqp(loss_matrix, loss_rhs, constraint_matrix, tol: float = 1e-8,
             constraint_rhs=None, max_iter: int | None = None) -> CombinationWeights:
    """``min ||B w - y||^2  s.t.  A w = c`` through its KKT system and GMRES.

    Falls back to a slightly regularized KKT system (``1e-10`` on both
    diagonal blocks) if the plain system does not converge.
    """
    B = np.asarray(loss_matrix, dtype=np.float64)
    y = np.asarray(loss_rhs, dtype=np.float64)
    A = np.asarray(constraint_matrix, dtype=np.float64).reshape(-1, B.shape[1])
    N, n = B.shape[1], A.shape[0]
    if B.shape[0] != y.shape[0]:
        raise InputError("loss rhs length does not match loss matrix")
    c = np.zeros(n) if constraint_rhs is None else np.asarray(constraint_rhs, dtype=np.float64)
    if n == 0:
        omega, report = lstsq_solve(B, y, tol=tol, max_iter=max_iter)
        return CombinationWeights(omega, report, "eqqp", np.zeros(0))
    rhs = np.concatenate([B.T @ y, c])
    m = N + n
    if max_iter is None:
        max_iter = 4 * m
    best = None
    for eps in (0.0, KKT_FALLBACK_DAMPING):
        sol, report = gmres_solve(_kkt_operator(B, A, eps), rhs, tol=tol, max_iter=max_iter, restart=m)
        if best is None or report.final_residual_norm < best[1].final_residual_norm:
            best = (sol, report)
        if report.converged:
            break
    sol, report = best
    return CombinationWeights(sol[:N], report, "eqqp", sol[N:])


def vjp_eqqp(loss_matrix, loss_rhs, constraint_matrix, solution: CombinationWeights, upstream,
             tol: float = 1e-10, constraint_rhs=None) -> AdjointState:
    """Implicit gradient through the KKT system of :func:`fit_eqqp`.

    ``cotangent_A``/``cotangent_b`` are for the constraint rows and rhs,
    ``cotangent_B``/``cotangent_y`` for the quadratic loss.
    """
    B = np.asarray(loss_matrix, dtype=np.float64)
    y = np.asarray(loss_rhs, dtype=np.float64)
    A = np.asarray(constraint_matrix, dtype=np.float64).reshape(-1, B.shape[1])
    g = np.asarray(upstream, dtype=np.float64)
    N, n = B.shape[1], A.shape[0]
    w = solution.omega
    if n == 0:
        st = vjp_linear(ConstraintSystem(B, y, np.zeros((B.shape[0], 0))), w, g, tol)
        return AdjointState(st.lam, np.zeros((0, N)), np.zeros(0), st.cotangent_A, st.cotangent_b, st.report)
    mu = solution.multipliers if solution.multipliers is not None else np.zeros(n)
    if not np.any(g):
        return AdjointState(np.zeros(N), np.zeros_like(A), np.zeros(n),
                            np.zeros_like(B), np.zeros_like(y))
    rhs = np.concatenate([g, np.zeros(n)])
    m = N + n
    best = None
    for eps in (0.0, KKT_FALLBACK_DAMPING):
        zeta, report = gmres_solve(_kkt_operator(B, A, eps), rhs, tol=tol, max_iter=4 * m, restart=m)
        if best is None or report.final_residual_norm < best[1].final_residual_norm:
            best = (zeta, report)
        if report.converged:
            break
    zeta, report = best
    lam, nu = zeta[:N], zeta[N:]
    r = B @ w - y
    Blam = B @ lam
    cot_B = -(np.outer(r, lam) + np.outer(Blam, w))
    cot_A = -(np.outer(mu, lam) + np.outer(nu, w))
    return AdjointState(lam, cot_A, nu, cot_B, Blam, report)


# ----------------------------------------------------------------------------
# nonlinear least squares

def fit_nonlinear(residual_fn, omega0, tol: float = 1e-8, max_outer: int = 100,
                  mu0: float = 1e-6, inner: str = "lsqr", max_rejects: int = 20) -> CombinationWeights:
    """Levenberg-Marquardt on ``0.5 ||r(w)||^2``.

    Each step solves ``(J^T J + mu I) d = -J^T r``; ``mu`` is divided by 10
    after an accepted step and multiplied by 10 after a rejected one.
    ``inner="lsqr"`` solves the step as the damped problem
    ``min ||J d + r||^2 + mu ||d||^2``; ``inner="cg"`` runs CG on the
    normal equations.

    Wide systems (fewer residuals than weights) have exact solutions, so
    they stop on ``||r|| <= tol max(1, ||r(0)||)`` and first try an undamped
    minimum-norm Gauss-Newton step with backtracking: damping blocks the
    large steps along small singular directions of ``J`` that an exact fit
    needs.
    """
    if max_outer < 1:
        raise InputError("max_outer must be at least 1")
    w = np.asarray(omega0, dtype=np.float64).copy()
    r, J = residual_fn(w)
    r_norm = float(np.linalg.norm(r))
    wide = r.size < w.size
    if wide:
        # scale by the constant part b = -r(0) of the residual map
        target = tol * max(1.0, float(np.linalg.norm(residual_fn(np.zeros_like(w))[0])))
    mu = mu0
    grad_norm = float(np.linalg.norm(J.T @ r))

    def done():
        return r_norm <= target if wide else grad_norm <= tol * (1 + r_norm)

    it = 0
    converged = done()
    while not converged and it < max_outer:
        it += 1
        accepted = False
        if wide:
            trial = _gauss_newton_step(residual_fn, w, r, J, r_norm, inner)
            if trial is not None:
                w, r, J, r_norm = trial
                accepted = True
        for _ in range(0 if accepted else max_rejects):
            step = _lm_step(J, r, mu, inner)
            w_new = w + step
            r_new, J_new = residual_fn(w_new)
            new_norm = float(np.linalg.norm(r_new))
            # near a nonzero-residual minimum the decrease in ||r|| drops below
            # rounding; then accept steps that keep ||r|| and shrink the gradient
            flat = (new_norm <= r_norm * (1.0 + 64 * np.finfo(float).eps)
                    and np.linalg.norm(J_new.T @ r_new) < grad_norm)
            if np.isfinite(new_norm) and (new_norm < r_norm or flat):
                w, r, J, r_norm = w_new, r_new, J_new, new_norm
                mu = max(mu / 10.0, 1e-15)
                accepted = True
                break
            mu *= 10.0
        grad_norm = float(np.linalg.norm(J.T @ r))
        converged = done()
        if not accepted:
            break
    report = SolveReport(it, grad_norm, converged, f"levenberg-marquardt/{inner}", tol, 1 + r_norm, r_norm)
    return CombinationWeights(w, report, "nonlinear")


def _gauss_newton_step(residual_fn, w, r, J, r_norm, inner, min_step: float = 2.0 ** -20):
    """Minimum-norm Gauss-Newton direction with Armijo backtracking, or None."""
    if inner == "cg":
        d = _lm_step(J, r, 0.0, inner)
    else:
        d, _ = lstsq_solve(J, -r, tol=1e-12)
    t = 1.0
    while t >= min_step:
        w_new = w + t * d
        r_new, J_new = residual_fn(w_new)
        new_norm = float(np.linalg.norm(r_new))
        if np.isfinite(new_norm) and new_norm <= (1.0 - 1e-4 * t) * r_norm:
            return w_new, r_new, J_new, new_norm
        t *= 0.5
    return None


def _lm_step(J, r, mu, inner):
    if inner == "lsqr":
        step, _ = lstsq_solve(J, -r, tol=1e-12, damping=mu)
        return step
    if inner == "cg":
        step, _ = cg_solve(lambda v: J.T @ (J @ v) + mu * v, -(J.T @ r), tol=1e-12)
        return step
    raise InputError(f"unknown inner solver {inner!r}")


def stationarity_adjoint(hessian: np.ndarray, upstream, tol: float = 1e-10):
    """``lam = H^+ upstream`` for the symmetric Hessian of a nonlinear fit."""
    lam, report = lstsq_solve(hessian, np.asarray(upstream, dtype=np.float64), tol=tol)
    return lam, report


# ----------------------------------------------------------------------------
# trained model and inference

@dataclass
class SolutionField:
    """Trained basis plus fitted weights for one parameter field."""

    params: object
    omega: CombinationWeights
    problem: object
    parameter_field: object
    mollified: bool = False

    def __call__(self, points) -> np.ndarray:
        return self.problem.predict(self.params, self.omega.omega, self.parameter_field, points)


def infer(field: SolutionField, test_points, subset_size: int, seed: int = 0,
          tol: float = 1e-8, damping: float = 0.0):
    """Fit the weights on a random subset of ``test_points`` and evaluate everywhere.

    Returns (values at all test points, CombinationWeights). ``field.omega`` is
    replaced by the new fit.
    """
    pts = np.asarray(test_points, dtype=np.float64)
    if subset_size < 1:
        raise InputError("subset_size must be at least 1")
    if subset_size > pts.shape[0]:
        raise InputError("subset_size exceeds the number of test points")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(pts.shape[0], size=subset_size, replace=False))
    weights = field.problem.fit(field.params, field.parameter_field, pts[idx], tol=tol, damping=damping)
    field.omega = weights
    return field(pts), weights
