"""Classical grid solvers used as evaluation targets, plus scattered-data
cubic interpolation.

Grid arrays are indexed ``[i_x, i_t]`` (or ``[i_x, i_y]``); axes include both
end points except the periodic Burgers space axis, which omits ``x = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CloughTocher2DInterpolator, CubicSpline, NearestNDInterpolator
from scipy.spatial import QhullError, cKDTree

from . import kernels
from .errors import ConfigurationError, InputError, SolverError
from .io import read_container, write_container
from .linalg import cg_solve
from .operators import (BURGERS_VISCOSITY, DARCY_FORCING, ParameterField,
                        convection_inflow, convection_initial)

PROVENANCES = ("lax-wendroff", "darcy-fd", "burgers-fd", "model", "interpolation")
ORACLE_VERSION = 1
_GRID_MAGIC = b"PDECLGRD"
_GRID_VERSION = 1


@dataclass
class GridSolution:
    values: np.ndarray
    axes: tuple
    problem: str
    provenance: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.axes = tuple(np.asarray(a, dtype=np.float64) for a in self.axes)
        if self.provenance not in PROVENANCES:
            raise InputError(f"unknown provenance {self.provenance!r}")
        if self.values.shape != self.grid_shape:
            raise InputError(f"values shape {self.values.shape} does not match axes {self.grid_shape}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("grid solution has non-finite values")

    @property
    def grid_shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        """Grid nodes as a (P, 2) array in C order of ``values``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def save(self, path) -> None:
        header = {"kind": "grid_solution", "problem": self.problem, "provenance": self.provenance,
                  "grid_shape": list(self.grid_shape)}
        arrays = {f"axis{i}": a for i, a in enumerate(self.axes)}
        arrays["values"] = self.values
        write_container(path, _GRID_MAGIC, _GRID_VERSION, header, arrays)

    @classmethod
    def load(cls, path) -> "GridSolution":
        header, arrays = read_container(path, _GRID_MAGIC, _GRID_VERSION)
        axes = tuple(arrays[f"axis{i}"] for i in range(len(header["grid_shape"])))
        return cls(arrays["values"], axes, header["problem"], header["provenance"])

    def export_csv(self, path) -> None:
        """One line per first-axis index, comma-separated."""
        np.savetxt(path, np.atleast_2d(self.values), delimiter=",", fmt="%.17g")


def unit_axis(n: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def periodic_axis(n: int) -> np.ndarray:
    return np.arange(n) / n


# ----------------------------------------------------------------------------

def lax_wendroff_convection(beta: ParameterField, nx: int, nt: int, refine: int = 1,
                            cfl: float = 1.0, max_substeps: int = 100_000,
                            initial=None, inflow=None) -> GridSolution:
    """Second-order Lax-Wendroff for ``u_t + beta(x) u_x = 0`` on [0,1]^2.

    Uses ``u_tt = beta (beta u_x)_x`` with face-averaged ``beta``, inflow data
    ``sin(pi t / 2)`` at x = 0, initial data ``sin(pi x)`` and a second-order
    one-sided update at the outflow end. The space grid is refined by
    ``refine`` and the time step by as much as the CFL bound needs; the result
    is subsampled onto ``nx`` x ``nt`` nodes. ``initial`` and ``inflow``
    replace the default data (used for convergence studies with smooth,
    compatible data).
    """
    if nx < 3 or nt < 2 or refine < 1:
        raise InputError("need nx >= 3, nt >= 2, refine >= 1")
    n_int = (nx - 1) * refine + 1
    x = unit_axis(n_int)
    b = np.asarray(beta(x), dtype=np.float64)
    if not np.all(np.isfinite(b)) or np.any(b <= 0):
        raise ConfigurationError("Lax-Wendroff needs a positive finite wavespeed (inflow at x = 0)")
    dx = 1.0 / (n_int - 1)
    dt_out = 1.0 / (nt - 1)
    n_sub = max(1, math.ceil(float(b.max()) * dt_out / (cfl * dx) - 1e-12))
    if not 0 < cfl <= 1.0 or n_sub > max_substeps:
        raise ConfigurationError(f"CFL condition cannot be met (cfl={cfl}, substeps={n_sub})")
    dt = dt_out / n_sub
    lam = dt / dx
    t_int = np.arange(n_sub * (nt - 1) + 1) * dt
    h = convection_initial if initial is None else initial
    g = convection_inflow if inflow is None else inflow
    u_init = np.asarray(h(x), dtype=np.float64)
    g_vals = np.asarray(g(t_int), dtype=np.float64)
    snaps = kernels.lax_wendroff_run(u_init, b, lam, g_vals, n_sub, nt)
    values = snaps[:, ::refine].T.copy()
    return GridSolution(values, (unit_axis(nx), unit_axis(nt)), "convection", "lax-wendroff")


def characteristics_solution(x, t):
    """Exact solution for constant unit wavespeed."""
    x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
    return np.where(x > t, convection_initial(x - t), convection_inflow(t - x))


# ----------------------------------------------------------------------------

def _nodal_coefficient(nu: ParameterField, n: int) -> np.ndarray:
    if nu.dim != 2:
        raise InputError("Darcy needs a 2D coefficient")
    if nu.shape == (n, n) and np.allclose(nu.grid[0], unit_axis(n)) and np.allclose(nu.grid[1], unit_axis(n)):
        k = nu.values
    else:
        ax = unit_axis(n)
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        k = nu(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(n, n)
    if np.any(k <= 0):
        raise InputError("diffusion coefficient must be positive")
    return k


def _face_coefficients(k):
    kx = 2.0 * k[1:, 1:-1] * k[:-1, 1:-1] / (k[1:, 1:-1] + k[:-1, 1:-1])
    ky = 2.0 * k[1:-1, 1:] * k[1:-1, :-1] / (k[1:-1, 1:] + k[1:-1, :-1])
    return kx, ky


def darcy_operator(k: np.ndarray):
    """Matrix-free flux-form operator on interior nodes for nodal coefficients ``k``."""
    n = k.shape[0]
    kx, ky = _face_coefficients(k)
    inv_h2 = float((n - 1) ** 2)
    m = n - 2

    def apply(v):
        return kernels.darcy_apply(v.reshape(m, m), kx, ky, inv_h2).ravel()

    return apply


def darcy_fd_solve(nu: ParameterField, n: int, forcing=DARCY_FORCING, tol: float = 1e-10,
                   max_iter: int | None = None) -> GridSolution:
    """``-div(nu grad u) = forcing`` with u = 0 on the boundary of the unit square.

    Harmonic-mean face coefficients, conjugate gradients on the interior
    nodes. ``forcing`` may be a constant, an (n, n) nodal array or a callable
    of (x, y).
    """
    if n < 8:
        raise InputError("n must be at least 8")
    k = _nodal_coefficient(nu, n)
    ax = unit_axis(n)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    if callable(forcing):
        f = np.asarray(forcing(X, Y), dtype=np.float64)
    else:
        f = np.broadcast_to(np.asarray(forcing, dtype=np.float64), (n, n))
    rhs = np.ascontiguousarray(f[1:-1, 1:-1]).ravel()
    op = darcy_operator(k)
    if max_iter is None:
        max_iter = 20 * rhs.size
    sol, report = cg_solve(op, rhs, tol=tol, max_iter=max_iter)
    if not report.converged:
        raise SolverError(f"Darcy CG did not converge: {report}", report)
    u = np.zeros((n, n))
    u[1:-1, 1:-1] = sol.reshape(n - 2, n - 2)
    return GridSolution(u, (ax, ax), "darcy", "darcy-fd")


# ----------------------------------------------------------------------------

def burgers_reference(u0: ParameterField, viscosity: float = BURGERS_VISCOSITY, nx: int = 128,
                      nt: int = 100, refine: int = 4, cfl: float = 0.4) -> GridSolution:
    """Periodic Burgers on [0,1) x [0,1].

    Conservative central convection (Adams-Bashforth 2) with Crank-Nicolson
    diffusion on a grid ``refine`` times finer than requested, subsampled to
    ``nx`` periodic nodes by ``nt`` times.
    """
    if viscosity <= 0:
        raise InputError("viscosity must be positive")
    if refine < 1 or nx < 4 or nt < 2:
        raise InputError("need nx >= 4, nt >= 2, refine >= 1")
    n_int = nx * refine
    x = periodic_axis(n_int)
    u_init = np.asarray(u0(x), dtype=np.float64)
    dx = 1.0 / n_int
    dt_out = 1.0 / (nt - 1)
    umax = float(np.max(np.abs(u_init)))
    dt_max = cfl * dx / max(umax, 1e-12)
    dt_max = min(dt_max, dt_out)
    n_sub = max(1, math.ceil(dt_out / dt_max - 1e-12))
    snaps = kernels.burgers_run(u_init, float(viscosity), dx, dt_out / n_sub, n_sub, nt)
    if not np.all(np.isfinite(snaps)) or np.max(np.abs(snaps)) > 10 * umax:
        raise SolverError(f"Burgers solver unstable (max |u| = {np.nanmax(np.abs(snaps)):.3g}, "
                          f"10 max|u0| = {10 * umax:.3g})")
    values = snaps[:, ::refine].T.copy()
    return GridSolution(values, (periodic_axis(nx), unit_axis(nt)), "burgers", "burgers-fd")


# ----------------------------------------------------------------------------

def cubic_interpolate(sample_points, sample_values, query_grid):
    """Piecewise-cubic interpolation of scattered samples.

    2D uses Clough-Tocher on the Delaunay triangulation, 1D a natural cubic
    spline. Queries outside the samples' hull take the nearest sample value.
    ``query_grid`` is either a tuple of axes (returns a GridSolution) or a
    (Q, d) point array (returns an array).
    """
    pts = np.asarray(sample_points, dtype=np.float64)
    vals = np.asarray(sample_values, dtype=np.float64).ravel()
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] != vals.shape[0]:
        raise InputError("sample points and values differ in length")
    dim = pts.shape[1]
    as_grid = isinstance(query_grid, tuple)
    if as_grid:
        mesh = np.meshgrid(*query_grid, indexing="ij")
        q = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        q = np.asarray(query_grid, dtype=np.float64)
        q = q[:, None] if q.ndim == 1 else q
    if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
        raise InputError("coincident sample points")
    if dim == 1:
        order = np.argsort(pts[:, 0])
        xs, ys = pts[order, 0], vals[order]
        if xs.size < 2:
            raise InputError("need at least 2 samples in 1D")
        spline = CubicSpline(xs, ys, bc_type="natural")
        xq = q[:, 0]
        out = spline(np.clip(xq, xs[0], xs[-1]))
        out = np.where(xq < xs[0], ys[0], np.where(xq > xs[-1], ys[-1], out))
    elif dim == 2:
        if pts.shape[0] < 16:
            raise InputError("need at least 16 samples in 2D")
        try:
            ct = CloughTocher2DInterpolator(pts, vals, tol=1e-12, maxiter=1000)
        except (QhullError, ValueError) as exc:
            raise InputError(f"degenerate sample set: {exc}") from None
        out = ct(q)
        outside = ~np.isfinite(out)
        if np.any(outside):
            out[outside] = NearestNDInterpolator(pts, vals)(q[outside])
    else:
        raise InputError("only 1D and 2D samples are supported")
    # queries that coincide with a sample return it exactly
    dist, idx = cKDTree(pts).query(q, k=1)
    hit = dist == 0.0
    out[hit] = vals[idx[hit]]
    if as_grid:
        shape = tuple(len(a) for a in query_grid)
        problem = "convection"
        return GridSolution(out.reshape(shape), query_grid, problem, "interpolation")
    return out


# ----------------------------------------------------------------------------

def residual_on_grid(u: GridSolution, problem: str, parameter_field: ParameterField,
                     viscosity: float = BURGERS_VISCOSITY) -> float:
    """Mean squared finite-difference PDE residual over interior nodes."""
    U = u.values
    if U.ndim != 2:
        raise InputError("residual_on_grid needs a 2D grid")
    if problem == "convection":
        x, t = u.axes
        beta = parameter_field(x)
        if beta.shape[0] != U.shape[0]:
            raise InputError("wavespeed does not match the grid")
        dx, dt = x[1] - x[0], t[1] - t[0]
        ut = (U[1:-1, 2:] - U[1:-1, :-2]) / (2 * dt)
        ux = (U[2:, 1:-1] - U[:-2, 1:-1]) / (2 * dx)
        res = ut + beta[1:-1, None] * ux
    elif problem == "darcy":
        n = U.shape[0]
        if U.shape != (n, n):
            raise InputError("Darcy grid must be square")
        k = _nodal_coefficient(parameter_field, n)
        res = darcy_operator(k)(np.ascontiguousarray(U[1:-1, 1:-1]).ravel()) - DARCY_FORCING
    elif problem == "burgers":
        x, t = u.axes
        dx, dt = 1.0 / U.shape[0], t[1] - t[0]
        up, um = np.roll(U, -1, axis=0), np.roll(U, 1, axis=0)
        ux = (up - um) / (2 * dx)
        uxx = (up - 2 * U + um) / dx ** 2
        ut = (U[:, 2:] - U[:, :-2]) / (2 * dt)
        res = ut + U[:, 1:-1] * ux[:, 1:-1] - viscosity * uxx[:, 1:-1]
    else:
        raise InputError(f"unknown problem {problem!r}")
    return float(np.mean(np.square(res)))
