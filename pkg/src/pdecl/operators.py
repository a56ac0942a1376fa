"""Constraint rows for the three PDEs.

Every linear operator used here is a pointwise linear functional of a jet:
``row = c0 * value + sum_k c1[k] * d_k + sum_k c2[k] * d_kk``. A
:class:`RowStencil` stores those coefficients per point, which gives both the
assembled matrix and, by transposition, the jet adjoints needed for
parameter gradients.

Two-dimensional points are ordered ``(x, t)`` for the space-time problems and
``(x, y)`` for Darcy; jets carry derivatives along those two coordinates in
the same order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .errors import InputError
from .network import JetBundle

FIELD_KINDS = ("diffusion", "wavespeed", "initial_condition", "diffusion_gradient", "latent")
BURGERS_VISCOSITY = 0.01
DARCY_FORCING = 1.0


@dataclass
class ParameterField:
    """A PDE parameter sampled on a tensor grid.

    ``grid`` holds one coordinate array per axis; ``values`` has the grid's
    shape, plus a trailing component axis for vector fields.
    """

    kind: str
    grid: tuple
    values: np.ndarray
    interpolation: str = "linear"
    periodic: bool = False
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise InputError(f"unknown field kind {self.kind!r}")
        if self.interpolation not in ("linear", "nearest"):
            raise InputError(f"unknown interpolation {self.interpolation!r}")
        self.grid = tuple(np.asarray(g, dtype=np.float64) for g in self.grid)
        self.values = np.asarray(self.values, dtype=np.float64)
        shape = tuple(len(g) for g in self.grid)
        if self.values.shape[:len(shape)] != shape:
            raise InputError(f"values shape {self.values.shape} does not match grid {shape}")
        if not np.all(np.isfinite(self.values)):
            raise InputError("parameter field has non-finite values")

    @property
    def dim(self) -> int:
        return len(self.grid)

    @property
    def shape(self) -> tuple:
        return tuple(len(g) for g in self.grid)

    def check(self) -> "ParameterField":
        """Enforce the kind-specific value ranges."""
        if self.kind == "diffusion" and np.any(self.values <= 0):
            raise InputError("diffusion coefficient must be positive")
        if self.kind == "wavespeed" and np.any(self.values < 1.0):
            raise InputError("wavespeed must be >= 1")
        return self

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        if self.dim == 1:
            x = pts.reshape(-1) if pts.ndim <= 1 else pts[:, 0]
            return self._interp_1d(x)
        if pts.ndim != 2 or pts.shape[1] < self.dim:
            raise InputError(f"points must have shape (P, {self.dim})")
        method = self.interpolation
        interp = RegularGridInterpolator(self.grid, self.values, method=method,
                                         bounds_error=False, fill_value=None)
        return interp(pts[:, :self.dim])

    def _interp_1d(self, x):
        g = self.grid[0]
        if self.periodic:
            period = 1.0
            x = np.mod(x, period)
            if self.interpolation == "nearest":
                h = period / len(g)
                idx = np.rint((x - g[0]) / h).astype(int) % len(g)
                return self.values[idx]
            gx = np.concatenate([g, [g[0] + period]])
            if self.values.ndim == 1:
                return np.interp(x, gx, np.concatenate([self.values, self.values[:1]]))
            vals = np.concatenate([self.values, self.values[:1]])
            return np.stack([np.interp(x, gx, vals[:, c]) for c in range(vals.shape[1])], axis=-1)
        if self.interpolation == "nearest":
            idx = np.clip(np.searchsorted(g, x), 1, len(g) - 1)
            left = g[idx - 1]
            idx = np.where(np.abs(x - left) <= np.abs(g[idx] - x), idx - 1, idx)
            return self.values[idx]
        if self.values.ndim == 1:
            return np.interp(x, g, self.values)
        return np.stack([np.interp(x, g, self.values[:, c]) for c in range(self.values.shape[1])], axis=-1)


@dataclass
class SamplePlan:
    fit_points: np.ndarray
    loss_points: np.ndarray
    icbc_points: np.ndarray | None = None
    loss_icbc_points: np.ndarray | None = None
    seed: int | None = None


@dataclass
class ConstraintSystem:
    matrix: np.ndarray
    rhs: np.ndarray
    points: np.ndarray
    icbc_matrix: np.ndarray | None = None
    icbc_rhs: np.ndarray | None = None
    icbc_points: np.ndarray | None = None

    def __post_init__(self):
        if self.matrix.shape[0] != self.rhs.shape[0]:
            raise InputError("rhs length does not match matrix rows")
        if self.icbc_matrix is not None and self.icbc_matrix.shape[1] != self.matrix.shape[1]:
            raise InputError("icbc matrix width does not match")

    @property
    def n_basis(self) -> int:
        return self.matrix.shape[1]

    def stacked(self):
        """Interior rows followed by icbc rows."""
        if self.icbc_matrix is None or self.icbc_matrix.shape[0] == 0:
            return self.matrix, self.rhs
        return (np.vstack([self.matrix, self.icbc_matrix]),
                np.concatenate([self.rhs, self.icbc_rhs]))

    @property
    def n_rows(self) -> int:
        extra = 0 if self.icbc_matrix is None else self.icbc_matrix.shape[0]
        return self.matrix.shape[0] + extra


@dataclass
class RowStencil:
    """Per-point coefficients of a linear jet functional.

    c0 : (P,), c1 : (P, d), c2 : (P, d).
    """

    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray | None = None

    def apply(self, jet: JetBundle) -> np.ndarray:
        rows = self.c0[:, None] * jet.values
        rows = rows + np.einsum("pnd,pd->pn", jet.first, self.c1)
        if self.c2 is not None:
            rows = rows + np.einsum("pnd,pd->pn", jet.second, self.c2)
        return rows

    def adjoint(self, cot: np.ndarray) -> JetBundle:
        """Jet adjoints whose pairing with a jet equals ``<cot, apply(jet)>``."""
        values = self.c0[:, None] * cot
        first = cot[:, :, None] * self.c1[:, None, :]
        second = None if self.c2 is None else cot[:, :, None] * self.c2[:, None, :]
        return JetBundle(values, first, second)


def _check_unit_box(points, name="points"):
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InputError(f"{name} must have shape (P, 2)")
    if np.any(pts < 0.0) or np.any(pts > 1.0):
        raise InputError(f"{name} contains points outside [0, 1]^2")
    return pts


def sample_points(domain, n: int, seed, stratum: str = "interior") -> np.ndarray:
    """Uniform points in a box, on its ``t = lo`` face (initial) or ``x = lo`` face (boundary).

    ``domain`` is a sequence of (lo, hi) pairs; the last coordinate is time.
    """
    bounds = np.asarray(domain, dtype=np.float64)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 1] <= bounds[:, 0]):
        raise InputError("domain must be a list of (lo, hi) pairs with hi > lo")
    if n < 1:
        raise InputError("n must be at least 1")
    rng = np.random.default_rng(seed)
    lo, hi = bounds[:, 0], bounds[:, 1]
    pts = lo + (hi - lo) * rng.random((n, len(bounds)))
    if stratum == "interior":
        # random() is in [0, 1); reject the (measure-zero) lower face
        bad = np.any(pts <= lo, axis=1)
        while np.any(bad):
            pts[bad] = lo + (hi - lo) * rng.random((int(bad.sum()), len(bounds)))
            bad = np.any(pts <= lo, axis=1)
    elif stratum == "initial":
        pts[:, -1] = lo[-1]
    elif stratum == "boundary":
        pts[:, 0] = lo[0]
    else:
        raise InputError(f"unknown stratum {stratum!r}")
    return pts


def make_plan(n_fit: int, n_loss: int, n_icbc: int, seed: int, icbc: bool = True,
              domain=((0.0, 1.0), (0.0, 1.0)), boundary: bool = True) -> SamplePlan:
    """Independent fit/loss/icbc draws from one seed.

    The icbc points are split evenly between ``t = 0`` and ``x = 0``
    (``boundary=False`` puts them all on ``t = 0``).
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(6)
    fit = sample_points(domain, n_fit, seeds[0], "interior")
    loss = sample_points(domain, n_loss, seeds[1], "interior")
    fit_icbc = loss_icbc = None
    if icbc and n_icbc > 0:
        fit_icbc = _icbc_points(domain, n_icbc, seeds[2], seeds[3], boundary)
        loss_icbc = _icbc_points(domain, n_icbc, seeds[4], seeds[5], boundary)
    return SamplePlan(fit, loss, fit_icbc, loss_icbc, seed)


def _icbc_points(domain, n, s_init, s_bnd, boundary):
    if not boundary:
        return sample_points(domain, n, s_init, "initial")
    n_init = (n + 1) // 2
    parts = [sample_points(domain, n_init, s_init, "initial")]
    if n - n_init > 0:
        parts.append(sample_points(domain, n - n_init, s_bnd, "boundary"))
    return np.vstack(parts)


# ----------------------------------------------------------------------------
# convection

def convection_initial(x):
    return np.sin(np.pi * np.asarray(x))


def convection_inflow(t):
    return np.sin(0.5 * np.pi * np.asarray(t))


def convection_icbc_targets(points) -> np.ndarray:
    """``h(x)`` on ``t = 0`` and ``g(t)`` on ``x = 0`` (h wins at the corner; both are 0 there)."""
    pts = np.asarray(points, dtype=np.float64)
    on_initial = pts[:, 1] == 0.0
    on_inflow = pts[:, 0] == 0.0
    if not np.all(on_initial | on_inflow):
        raise InputError("icbc points must lie on t = 0 or x = 0")
    return np.where(on_initial, convection_initial(pts[:, 0]), convection_inflow(pts[:, 1]))


def convection_stencil(beta_values) -> RowStencil:
    beta_values = np.asarray(beta_values, dtype=np.float64)
    P = beta_values.shape[0]
    c1 = np.stack([beta_values, np.ones(P)], axis=1)
    return RowStencil(np.zeros(P), c1, None)


def value_stencil(P: int, d: int) -> RowStencil:
    return RowStencil(np.ones(P), np.zeros((P, d)), None)


def assemble_convection(beta: ParameterField, plan: SamplePlan, jets: JetBundle,
                        icbc_jets: JetBundle | None = None) -> ConstraintSystem:
    """Rows ``d_t f_i + beta(x) d_x f_i`` (rhs 0) plus value rows at icbc points."""
    pts = _check_unit_box(plan.fit_points, "fit points")
    if jets.first is None or jets.first.shape[0] != pts.shape[0]:
        raise InputError("convection needs first-order jets for every fit point")
    A = convection_stencil(beta(pts)).apply(jets)
    b = np.zeros(pts.shape[0])
    icbc_A = icbc_b = icbc_pts = None
    if plan.icbc_points is not None and len(plan.icbc_points):
        if icbc_jets is None:
            raise InputError("icbc points given without icbc jets")
        icbc_pts = _check_unit_box(plan.icbc_points, "icbc points")
        icbc_A = np.asarray(icbc_jets.values, dtype=np.float64)
        icbc_b = convection_icbc_targets(icbc_pts)
    return ConstraintSystem(A, b, pts, icbc_A, icbc_b, icbc_pts)


# ----------------------------------------------------------------------------
# Darcy

def mollifier_jet(points):
    """``m = sin(pi x) sin(pi y)`` with its first and pure second derivatives.

    Returns m (P,), dm (P, 2), d2m (P, 2).
    """
    pts = np.asarray(points, dtype=np.float64)
    sx, sy = np.sin(np.pi * pts[:, 0]), np.sin(np.pi * pts[:, 1])
    cx, cy = np.cos(np.pi * pts[:, 0]), np.cos(np.pi * pts[:, 1])
    m = sx * sy
    dm = np.stack([np.pi * cx * sy, np.pi * sx * cy], axis=1)
    d2m = np.stack([-np.pi ** 2 * m, -np.pi ** 2 * m], axis=1)
    return m, dm, d2m


def mollify(jet: JetBundle, points) -> JetBundle:
    """Jet of ``m * f`` by the product rule."""
    pts = _check_unit_box(np.atleast_2d(points))
    single = np.ndim(jet.values) == 1
    values = np.atleast_2d(jet.values)
    first = None if jet.first is None else (jet.first[None] if single else jet.first)
    second = None if jet.second is None else (jet.second[None] if single else jet.second)
    m, dm, d2m = mollifier_jet(pts)
    mv = m[:, None] * values
    mf = sf = None
    if first is not None:
        mf = m[:, None, None] * first + dm[:, None, :] * values[:, :, None]
    if second is not None:
        sf = (m[:, None, None] * second + 2.0 * dm[:, None, :] * first
              + d2m[:, None, :] * values[:, :, None])
    if single:
        return JetBundle(mv[0], None if mf is None else mf[0], None if sf is None else sf[0])
    return JetBundle(mv, mf, sf)


def compose_mollifier(stencil: RowStencil, points) -> RowStencil:
    """Stencil on the raw jet equivalent to ``stencil`` applied to the mollified jet."""
    m, dm, d2m = mollifier_jet(points)
    c1, c2 = stencil.c1, stencil.c2
    c0 = stencil.c0 * m + np.sum(c1 * dm, axis=1)
    n1 = c1 * m[:, None]
    n2 = None
    if c2 is not None:
        c0 = c0 + np.sum(c2 * d2m, axis=1)
        n1 = n1 + 2.0 * c2 * dm
        n2 = c2 * m[:, None]
    return RowStencil(c0, n1, n2)


def darcy_stencil(nu_values, grad_nu_values) -> RowStencil:
    """``-nu (u_xx + u_yy) - grad(nu) . grad(u)``."""
    nu_values = np.asarray(nu_values, dtype=np.float64)
    P = nu_values.shape[0]
    return RowStencil(np.zeros(P), -np.asarray(grad_nu_values, dtype=np.float64),
                      -np.repeat(nu_values[:, None], 2, axis=1))


def coefficient_gradient(nu: ParameterField, smoothing_radius: float = 1.0) -> ParameterField:
    """Gradient of a gridded coefficient after a short-range Gaussian blur.

    The blur uses ``sigma = smoothing_radius`` cells truncated at the same
    radius, then central differences (one-sided at the grid edges).
    """
    if nu.dim != 2:
        raise InputError("coefficient_gradient needs a 2D field")
    if min(nu.shape) < 3:
        raise InputError("grid must be at least 3x3")
    vals = nu.values
    if smoothing_radius > 0:
        vals = ndimage.gaussian_filter(vals, sigma=smoothing_radius, truncate=1.0, mode="nearest")
    gx = np.gradient(vals, nu.grid[0], axis=0, edge_order=1)
    gy = np.gradient(vals, nu.grid[1], axis=1, edge_order=1)
    return ParameterField("diffusion_gradient", nu.grid, np.stack([gx, gy], axis=-1),
                          "linear", False, nu.seed)


def assemble_darcy(nu: ParameterField, plan: SamplePlan, jets: JetBundle,
                   grad_nu: ParameterField | None = None,
                   smoothing_radius: float = 1.0) -> ConstraintSystem:
    """Rows of ``-div(nu grad u) = 1`` for jets of the mollified basis."""
    pts = _check_unit_box(plan.fit_points, "fit points")
    if np.any(nu.values <= 0):
        raise InputError("diffusion coefficient must be positive")
    if jets.second is None or jets.second.shape[0] != pts.shape[0]:
        raise InputError("Darcy needs second-order jets for every fit point")
    if grad_nu is None:
        grad_nu = coefficient_gradient(nu, smoothing_radius)
    A = darcy_stencil(nu(pts), grad_nu(pts)).apply(jets)
    return ConstraintSystem(A, np.full(pts.shape[0], DARCY_FORCING), pts)


# ----------------------------------------------------------------------------
# Burgers

@dataclass
class BurgersTerms:
    """Scalar fields at interior points: u, u_x, u_t, u_xx for a weight vector."""

    u: np.ndarray
    ux: np.ndarray
    ut: np.ndarray
    uxx: np.ndarray


def burgers_terms(jets: JetBundle, omega) -> BurgersTerms:
    c = jets.combine(omega)
    return BurgersTerms(c.values, c.first[:, 0], c.first[:, 1], c.second[:, 0])


def burgers_residual_and_jacobian(omega, jets: JetBundle, u0: ParameterField,
                                  viscosity: float = BURGERS_VISCOSITY,
                                  plan: SamplePlan | None = None,
                                  icbc_jets: JetBundle | None = None):
    """Residuals ``u_t + u u_x - visc u_xx`` at fit points and ``u - u0`` at t = 0 points.

    Returns (r, J) with J the exact Jacobian in ``omega``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if viscosity <= 0:
        raise InputError("viscosity must be positive")
    if jets.second is None:
        raise InputError("Burgers needs second-order jets")
    N = jets.values.shape[1]
    if omega.shape != (N,):
        raise InputError(f"omega must have length {N}")
    T = burgers_terms(jets, omega)
    r_int = T.ut + T.u * T.ux - viscosity * T.uxx
    J_int = (jets.first[:, :, 1] + T.u[:, None] * jets.first[:, :, 0]
             + T.ux[:, None] * jets.values - viscosity * jets.second[:, :, 0])
    if icbc_jets is None:
        return r_int, J_int
    if plan is None or plan.icbc_points is None:
        raise InputError("initial-condition jets given without their points")
    ic_pts = np.asarray(plan.icbc_points)
    if icbc_jets.values.shape != (ic_pts.shape[0], N):
        raise InputError("initial-condition jets do not match the icbc points")
    r_ic = icbc_jets.values @ omega - u0(ic_pts[:, 0])
    return np.concatenate([r_int, r_ic]), np.vstack([J_int, icbc_jets.values])
