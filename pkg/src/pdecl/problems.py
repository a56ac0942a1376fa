"""Per-PDE glue between the basis network, the constraint rows and the layer.

A problem knows how to encode domain points for the network, which jet
directions and derivative order its operator needs, how to fit weights for
one parameter field, and how to compute the outer training loss together
with its exact parameter gradient.

Points are evaluated in named blocks (``fit``, ``fit_icbc``, ``loss``,
``loss_icbc``) through a single recorded forward pass; row cotangents of
each block are turned into jet adjoints by transposing its stencil, and one
reverse sweep returns the parameter gradient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, SolverError
from .layer import (CombinationWeights, fit_eqqp, fit_linear, fit_nonlinear,
                    stationarity_adjoint, vjp_eqqp, vjp_linear)
from .network import JetBundle, NetworkParams, ParamGradient, backward, forward
from .operators import (BURGERS_VISCOSITY, DARCY_FORCING, ConstraintSystem, ParameterField,
                        SamplePlan, burgers_residual_and_jacobian, coefficient_gradient,
                        compose_mollifier, convection_icbc_targets, convection_stencil,
                        darcy_stencil, make_plan, mollifier_jet, value_stencil)
from . import oracles

BLOCKS = ("fit", "fit_icbc", "loss", "loss_icbc")
PREDICT_CHUNK = 32768


@dataclass
class Assembly:
    """One recorded forward pass over several named point blocks."""

    params: NetworkParams
    points: np.ndarray
    slices: dict
    jet: JetBundle
    tape: object
    stencils: dict = field(default_factory=dict)
    rhs: dict = field(default_factory=dict)

    def block_jet(self, name) -> JetBundle:
        s = self.slices[name]
        j = self.jet
        return JetBundle(j.values[s], None if j.first is None else j.first[s],
                         None if j.second is None else j.second[s])

    def rows(self, name) -> np.ndarray:
        return self.stencils[name].apply(self.block_jet(name))

    def has(self, name) -> bool:
        s = self.slices.get(name)
        return s is not None and s.stop > s.start

    def param_grad(self, row_cotangents: dict | None = None, jet_adjoints: dict | None = None) -> ParamGradient:
        """Parameter gradient from per-block row cotangents and/or jet adjoints."""
        P, N = self.jet.values.shape
        d = 0 if self.jet.first is None else self.jet.first.shape[2]
        vals = np.zeros((P, N))
        first = np.zeros((P, N, d)) if self.jet.first is not None else None
        second = np.zeros((P, N, d)) if self.jet.second is not None else None

        def add(s, adj: JetBundle):
            vals[s] += adj.values
            if adj.first is not None:
                first[s] += adj.first
            if adj.second is not None:
                second[s] += adj.second

        for name, cot in (row_cotangents or {}).items():
            if cot is not None and self.has(name):
                add(self.slices[name], self.stencils[name].adjoint(cot))
        for name, adj in (jet_adjoints or {}).items():
            if adj is not None and self.has(name):
                add(self.slices[name], adj)
        return backward(self.params, self.tape, JetBundle(vals, first, second))


@dataclass
class LossResult:
    loss: float
    grad: ParamGradient
    omega: CombinationWeights
    fit_residual: float = 0.0
    head_grad: np.ndarray | None = None


class Problem:
    """Common machinery; subclasses fill in encoding and operators."""

    name = ""
    order = 1
    fit_modes = ("linear",)
    mollified = False
    icbc = False
    icbc_boundary = True

    def __init__(self, fit_mode: str | None = None, n_features: int = 0, n_icbc: int = 0):
        self.fit_mode = fit_mode or self.fit_modes[0]
        if self.fit_mode not in self.fit_modes:
            raise ConfigurationError(f"{self.name} supports fit modes {self.fit_modes}, got {self.fit_mode!r}")
        if n_features < 0:
            raise ConfigurationError("n_features must be non-negative")
        self.n_features = int(n_features)
        self.n_icbc = int(n_icbc) if self.icbc else 0

    # -- encoding -----------------------------------------------------------
    @property
    def n_inputs(self) -> int:
        return 2 + self.n_features

    def encode(self, points, phi: ParameterField):
        """Returns (X, tangents, curvatures) for the two domain directions."""
        raise NotImplementedError

    def features(self, phi: ParameterField) -> np.ndarray:
        return np.zeros(0)

    def config(self) -> dict:
        return {"problem": self.name, "fit_mode": self.fit_mode, "n_features": self.n_features,
                "n_icbc": self.n_icbc}

    # -- evaluation ---------------------------------------------------------
    def jets(self, params: NetworkParams, points, phi, order=None, record=False):
        X, T, C = self.encode(points, phi)
        order = self.order if order is None else order
        return forward(params, X, T if order else None, C if order == 2 else None, order, record)

    def assemble(self, params: NetworkParams, phi: ParameterField, blocks: dict, order=None) -> Assembly:
        names = [k for k in BLOCKS if blocks.get(k) is not None]
        pts, slices, start = [], {}, 0
        for k in names:
            p = np.asarray(blocks[k], dtype=np.float64).reshape(-1, 2)
            slices[k] = slice(start, start + p.shape[0])
            start += p.shape[0]
            pts.append(p)
        points = np.vstack(pts) if pts else np.zeros((0, 2))
        jet, tape = self.jets(params, points, phi, order, record=True)
        asm = Assembly(params, points, slices, jet, tape)
        self.attach_stencils(asm, phi)
        return asm

    def attach_stencils(self, asm: Assembly, phi: ParameterField) -> None:
        raise NotImplementedError

    def predict(self, params: NetworkParams, omega, phi: ParameterField, points, bias: float = 0.0) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        w = np.asarray(omega, dtype=np.float64)
        u = np.empty(pts.shape[0])
        # chunked so dense grids (10^6 points) do not hold every layer at once
        for lo in range(0, pts.shape[0], PREDICT_CHUNK):
            X, _, _ = self.encode(pts[lo:lo + PREDICT_CHUNK], phi)
            u[lo:lo + PREDICT_CHUNK] = forward(params, X).values @ w
        u += bias
        if self.mollified:
            u = u * mollifier_jet(pts)[0]
        return u

    # -- sampling -----------------------------------------------------------
    def plan(self, n_fit: int, n_loss: int, seed) -> SamplePlan:
        return make_plan(n_fit, n_loss, self.n_icbc, seed, icbc=self.icbc, boundary=self.icbc_boundary)

    def fixed_icbc_points(self) -> np.ndarray | None:
        """Deterministic boundary points used at inference."""
        if not self.icbc or self.n_icbc == 0:
            return None
        if not self.icbc_boundary:
            x = (np.arange(self.n_icbc) + 0.5) / self.n_icbc
            return np.stack([x, np.zeros_like(x)], axis=1)
        n0 = (self.n_icbc + 1) // 2
        n1 = self.n_icbc - n0
        x = (np.arange(n0) + 0.5) / n0
        t = (np.arange(n1) + 0.5) / max(n1, 1)
        return np.vstack([np.stack([x, np.zeros(n0)], 1), np.stack([np.zeros(n1), t], 1)])

    def _blocks(self, plan: SamplePlan) -> dict:
        return {"fit": plan.fit_points, "fit_icbc": plan.icbc_points,
                "loss": plan.loss_points, "loss_icbc": plan.loss_icbc_points}

    # -- inner fit ----------------------------------------------------------
    def fit(self, params, phi, points, tol: float = 1e-8, damping: float = 0.0,
            icbc_points=None) -> CombinationWeights:
        """Fit weights with PDE rows at ``points`` (plus boundary rows if any)."""
        if icbc_points is None:
            icbc_points = self.fixed_icbc_points()
        asm = self.assemble(params, phi, {"fit": points, "fit_icbc": icbc_points})
        return self.fit_assembly(asm, phi, tol, damping)

    def fit_system(self, asm: Assembly, prefix: str = "fit") -> ConstraintSystem:
        ic = prefix + "_icbc"
        A = asm.rows(prefix)
        b = asm.rhs[prefix]
        if asm.has(ic):
            return ConstraintSystem(A, b, asm.points[asm.slices[prefix]], asm.rows(ic), asm.rhs[ic],
                                    asm.points[asm.slices[ic]])
        return ConstraintSystem(A, b, asm.points[asm.slices[prefix]])

    def fit_assembly(self, asm: Assembly, phi, tol: float, damping: float) -> CombinationWeights:
        system = self.fit_system(asm)
        if self.fit_mode == "eqqp":
            if not asm.has("fit_icbc"):
                raise ConfigurationError("eqqp mode needs boundary rows")
            return fit_eqqp(system.icbc_matrix, system.icbc_rhs, system.matrix, tol=tol)
        return fit_linear(system, tol=tol, damping=damping)

    # -- outer loss ---------------------------------------------------------
    def hard_loss(self, params: NetworkParams, phi: ParameterField, plan: SamplePlan,
                  tol: float = 1e-8, damping: float = 0.0, adjoint_tol: float | None = None) -> LossResult:
        """Mean squared held-out residual at the fitted weights, and its exact gradient."""
        adjoint_tol = tol * 1e-2 if adjoint_tol is None else adjoint_tol
        asm = self.assemble(params, phi, self._blocks(plan))
        weights = self.fit_assembly(asm, phi, tol, damping)
        w = weights.omega
        if not np.all(np.isfinite(w)):
            raise SolverError("inner fit produced non-finite weights", weights.report)
        system = self.fit_system(asm)
        loss_sys = self.fit_system(asm, "loss")
        A2, b2 = loss_sys.stacked()
        r2 = A2 @ w - b2
        n2 = r2.size
        loss = float(r2 @ r2) / n2
        g = 2.0 / n2 * (A2.T @ r2)
        cot_loss = 2.0 / n2 * np.outer(r2, w)
        n_loss = loss_sys.matrix.shape[0]
        cots = {"loss": cot_loss[:n_loss], "loss_icbc": cot_loss[n_loss:]}
        if self.fit_mode == "eqqp":
            st = vjp_eqqp(system.icbc_matrix, system.icbc_rhs, system.matrix, weights, g, tol=adjoint_tol)
            cots["fit"] = st.cotangent_A
            cots["fit_icbc"] = st.cotangent_B
            res = system.matrix @ w
            fit_res = float(np.linalg.norm(res))
        else:
            st = vjp_linear(system, weights, g, tol=adjoint_tol, damping=damping)
            n_fit = system.matrix.shape[0]
            cots["fit"] = st.cotangent_A[:n_fit]
            cots["fit_icbc"] = st.cotangent_A[n_fit:]
            A, b = system.stacked()
            fit_res = float(np.linalg.norm(A @ w - b) / max(np.linalg.norm(b), 1.0))
        return LossResult(loss, asm.param_grad(cots), weights, fit_res)

    def soft_loss(self, params: NetworkParams, head: np.ndarray, phi: ParameterField,
                  plan: SamplePlan) -> LossResult:
        """Penalty baseline: ``u = f^T w + c`` with ``head = (w, c)``.

        Loss is the mean squared PDE residual over fit and loss points plus
        the mean squared boundary mismatch.
        """
        asm = self.assemble(params, phi, self._blocks(plan))
        w, c = head[:-1], head[-1]
        cots, gw, gc, loss = {}, np.zeros_like(w), 0.0, 0.0
        groups = [("fit", "loss")]
        if asm.has("fit_icbc") or asm.has("loss_icbc"):
            groups.append(("fit_icbc", "loss_icbc"))
        for group in groups:
            names = [k for k in group if asm.has(k)]
            total = sum(asm.slices[k].stop - asm.slices[k].start for k in names)
            for k in names:
                R = asm.rows(k)
                e = R @ w + c * asm.stencils[k].c0 - asm.rhs[k]
                de = 2.0 / total * e
                loss += float(e @ e) / total
                gw += R.T @ de
                gc += float(asm.stencils[k].c0 @ de)
                cots[k] = np.outer(de, w)
        res = LossResult(loss, asm.param_grad(cots), CombinationWeights(w, None, "soft"))
        res.head_grad = np.concatenate([gw, [gc]])
        return res

    # -- reference solutions -----------------------------------------------
    def eval_axes(self, grid_shape) -> tuple:
        return tuple(oracles.unit_axis(n) for n in grid_shape)

    def oracle(self, phi: ParameterField, grid_shape) -> oracles.GridSolution:
        raise NotImplementedError


# ----------------------------------------------------------------------------

BETA_CENTER, BETA_SCALE = 3.0, 2.0


class Convection(Problem):
    """``u_t + beta(x) u_x = 0``; inputs (2x-1, 2t-1, wavespeed features)."""

    name = "convection"
    order = 1
    fit_modes = ("linear", "eqqp")
    icbc = True

    def __init__(self, fit_mode=None, n_features: int = 8, n_icbc: int = 50, oracle_refine: int = 8,
                 icbc_weight: float = 1.0):
        super().__init__(fit_mode, n_features, n_icbc)
        self.oracle_refine = int(oracle_refine)
        if not icbc_weight > 0:
            raise ConfigurationError("icbc_weight must be positive")
        # Boundary rows are scaled by this factor in every stacked system, so
        # they are not swamped by transport rows of size ~beta * |u_x|.
        self.icbc_weight = float(icbc_weight)

    def features(self, phi):
        if self.n_features == 0:
            return np.zeros(0)
        xs = np.linspace(0.0, 1.0, self.n_features)
        return (phi(xs) - BETA_CENTER) / BETA_SCALE

    def encode(self, points, phi):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        P = pts.shape[0]
        feats = np.broadcast_to(self.features(phi), (P, self.n_features))
        X = np.hstack([2.0 * pts - 1.0, feats])
        T = np.zeros((P, 2, self.n_inputs))
        T[:, 0, 0] = 2.0
        T[:, 1, 1] = 2.0
        return X, T, None

    def attach_stencils(self, asm, phi):
        for k in ("fit", "loss"):
            if k in asm.slices:
                pts = asm.points[asm.slices[k]]
                asm.stencils[k] = convection_stencil(phi(pts[:, 0]))
                asm.rhs[k] = np.zeros(pts.shape[0])
        for k in ("fit_icbc", "loss_icbc"):
            if k in asm.slices:
                pts = asm.points[asm.slices[k]]
                st = value_stencil(pts.shape[0], 2)
                st.c0 *= self.icbc_weight
                asm.stencils[k] = st
                asm.rhs[k] = self.icbc_weight * convection_icbc_targets(pts)

    def oracle(self, phi, grid_shape):
        nx, nt = grid_shape
        return oracles.lax_wendroff_convection(phi, nx, nt, refine=self.oracle_refine)

    def config(self):
        return {**super().config(), "oracle_refine": self.oracle_refine, "icbc_weight": self.icbc_weight}


NU_CENTER, NU_SCALE = 7.5, 4.5


class Darcy(Problem):
    """``-div(nu grad u) = 1`` with the mollified basis; inputs (2x-1, 2y-1, nu(x, y)).

    The coefficient input is piecewise constant, so its derivative along the
    jet directions is taken as zero.
    """

    name = "darcy"
    order = 2
    mollified = True

    def __init__(self, fit_mode=None, n_features: int = 1, n_icbc: int = 0, smoothing_radius: float = 1.0):
        super().__init__(fit_mode, n_features, 0)
        if self.n_features not in (0, 1):
            raise ConfigurationError("Darcy takes at most one coefficient feature")
        self.smoothing_radius = float(smoothing_radius)
        self._grad_cache = {}

    def encode(self, points, phi):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        P = pts.shape[0]
        cols = [2.0 * pts - 1.0]
        if self.n_features:
            cols.append(((phi(pts) - NU_CENTER) / NU_SCALE)[:, None])
        T = np.zeros((P, 2, self.n_inputs))
        T[:, 0, 0] = 2.0
        T[:, 1, 1] = 2.0
        return np.hstack(cols), T, np.zeros_like(T)

    def grad_nu(self, phi):
        key = id(phi)
        hit = self._grad_cache.get(key)
        if hit is None or hit[0] is not phi:
            hit = (phi, coefficient_gradient(phi, self.smoothing_radius))
            self._grad_cache = {key: hit}
        return hit[1]

    def attach_stencils(self, asm, phi):
        if np.any(phi.values <= 0):
            raise InputError("diffusion coefficient must be positive")
        gnu = self.grad_nu(phi)
        for k in ("fit", "loss"):
            if k in asm.slices:
                pts = asm.points[asm.slices[k]]
                asm.stencils[k] = compose_mollifier(darcy_stencil(phi(pts), gnu(pts)), pts)
                asm.rhs[k] = np.full(pts.shape[0], DARCY_FORCING)

    def oracle(self, phi, grid_shape):
        n = grid_shape[0]
        if tuple(grid_shape) != (n, n):
            raise InputError("Darcy grids must be square")
        return oracles.darcy_fd_solve(phi, n)

    def config(self):
        return {**super().config(), "smoothing_radius": self.smoothing_radius}


class Burgers(Problem):
    """``u_t + u u_x = nu u_xx`` on the periodic unit interval.

    Inputs (sin 2pi x, cos 2pi x, 2t-1, samples of u0), so periodicity holds
    exactly. Weights come from Levenberg-Marquardt on the residuals at fit
    points and initial-condition points.
    """

    name = "burgers"
    order = 2
    fit_modes = ("nonlinear",)
    icbc = True
    icbc_boundary = False

    def __init__(self, fit_mode=None, n_features: int = 16, n_icbc: int = 64,
                 viscosity: float = BURGERS_VISCOSITY, max_outer: int = 100, oracle_refine: int = 4):
        super().__init__(fit_mode, n_features, n_icbc)
        self.viscosity = float(viscosity)
        self.max_outer = int(max_outer)
        self.oracle_refine = int(oracle_refine)

    @property
    def n_inputs(self) -> int:
        return 3 + self.n_features

    def features(self, phi):
        if self.n_features == 0:
            return np.zeros(0)
        return 2.0 * phi(np.arange(self.n_features) / self.n_features)

    def encode(self, points, phi):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        P = pts.shape[0]
        a = 2 * np.pi * pts[:, 0]
        s, c = np.sin(a), np.cos(a)
        feats = np.broadcast_to(self.features(phi), (P, self.n_features))
        X = np.hstack([s[:, None], c[:, None], 2.0 * pts[:, 1:2] - 1.0, feats])
        T = np.zeros((P, 2, self.n_inputs))
        C = np.zeros_like(T)
        T[:, 0, 0], T[:, 0, 1] = 2 * np.pi * c, -2 * np.pi * s
        C[:, 0, 0], C[:, 0, 1] = -4 * np.pi ** 2 * s, -4 * np.pi ** 2 * c
        T[:, 1, 2] = 2.0
        return X, T, C

    def attach_stencils(self, asm, phi):
        for k in BLOCKS:
            if k in asm.slices:
                pts = asm.points[asm.slices[k]]
                asm.rhs[k] = phi(pts[:, 0]) if k.endswith("icbc") else np.zeros(pts.shape[0])

    def residual_fn(self, asm, phi, prefix="fit"):
        jets = asm.block_jet(prefix)
        ic = prefix + "_icbc"
        ic_jets = asm.block_jet(ic) if asm.has(ic) else None
        plan = SamplePlan(asm.points[asm.slices[prefix]], None,
                          asm.points[asm.slices[ic]] if ic_jets is not None else None)

        def fn(w):
            return burgers_residual_and_jacobian(w, jets, phi, self.viscosity, plan, ic_jets)

        return fn

    def initial_guess(self, asm, phi) -> np.ndarray:
        """Least-squares fit of the linear (heat) part plus the initial condition."""
        jets = asm.block_jet("fit")
        A = jets.first[:, :, 1] - self.viscosity * jets.second[:, :, 0]
        b = np.zeros(A.shape[0])
        if asm.has("fit_icbc"):
            A = np.vstack([A, asm.block_jet("fit_icbc").values])
            b = np.concatenate([b, asm.rhs["fit_icbc"]])
        return fit_linear(ConstraintSystem(A, b, np.zeros((A.shape[0], 2))), tol=1e-10).omega

    def fit_assembly(self, asm, phi, tol, damping):
        w0 = self.initial_guess(asm, phi)
        return fit_nonlinear(self.residual_fn(asm, phi), w0, tol=tol, max_outer=self.max_outer)

    def _point_adjoints(self, jets: JetBundle, w, lam, cu, cux, cut, cuxx, cl, clx, clt, clxx):
        """Jet adjoint of ``sum_p cu_p u_p + ... + cl_p l_p + ...`` where
        ``u = f.w`` and ``l = f.lam`` and their derivatives."""
        vals = np.outer(cu, w) + (0 if cl is None else np.outer(cl, lam))
        P, N = vals.shape
        first = np.zeros((P, N, 2))
        second = np.zeros((P, N, 2))
        first[:, :, 0] = np.outer(cux, w) + (0 if clx is None else np.outer(clx, lam))
        first[:, :, 1] = np.outer(cut, w) + (0 if clt is None else np.outer(clt, lam))
        second[:, :, 0] = np.outer(cuxx, w) + (0 if clxx is None else np.outer(clxx, lam))
        return JetBundle(vals, first, second)

    def hard_loss(self, params, phi, plan, tol=1e-8, damping=0.0, adjoint_tol=None):
        """Mean squared held-out residual at the Levenberg-Marquardt fit.

        The weights solve ``J^T r = 0``; differentiating that condition gives
        ``dL/dtheta = dL/dtheta|_w - d/dtheta [sum_j r_j (J_j lam)]`` with
        ``lam = H^+ dL/dw`` and ``H = J^T J + sum_j r_j hess(r_j)``.
        """
        adjoint_tol = tol * 1e-2 if adjoint_tol is None else adjoint_tol
        nu = self.viscosity
        asm = self.assemble(params, phi, self._blocks(plan))
        weights = self.fit_assembly(asm, phi, tol, damping)
        w = weights.omega
        if not np.all(np.isfinite(w)):
            raise SolverError("inner fit produced non-finite weights", weights.report)

        r2, J2 = self.residual_fn(asm, phi, "loss")(w)
        n2 = r2.size
        loss = float(r2 @ r2) / n2
        c = 2.0 / n2 * r2
        g = J2.T @ c
        adj = {}
        lj = asm.block_jet("loss")
        n_loss = lj.values.shape[0]
        T = _terms(lj, w)
        ci = c[:n_loss]
        adj["loss"] = self._point_adjoints(lj, w, None, ci * T[1], ci * T[0], ci, -nu * ci,
                                           None, None, None, None)
        if asm.has("loss_icbc"):
            nic = asm.slices["loss_icbc"].stop - asm.slices["loss_icbc"].start
            adj["loss_icbc"] = JetBundle(np.outer(c[n_loss:], w), np.zeros((nic, w.size, 2)),
                                         np.zeros((nic, w.size, 2)))

        # implicit part at the stationary point of the inner fit
        r, J = self.residual_fn(asm, phi, "fit")(w)
        fj = asm.block_jet("fit")
        n_fit = fj.values.shape[0]
        H = J.T @ J
        fw = fj.values @ w
        fxw = fj.first[:, :, 0] @ w
        ri = r[:n_fit]
        M = fj.values.T @ (ri[:, None] * fj.first[:, :, 0])
        H = H + M + M.T
        lam, _ = stationarity_adjoint(H, g, tol=adjoint_tol)
        s = J @ lam
        si = s[:n_fit]
        Tl = _terms(fj, lam)
        cu = -(si * fxw + ri * Tl[1])
        cux = -(si * fw + ri * Tl[0])
        cut = -si
        cuxx = nu * si
        cl = -(ri * fxw)
        clx = -(ri * fw)
        clt = -ri
        clxx = nu * ri
        imp = self._point_adjoints(fj, w, lam, cu, cux, cut, cuxx, cl, clx, clt, clxx)
        adj["fit"] = imp
        if asm.has("fit_icbc"):
            ric, sic = r[n_fit:], s[n_fit:]
            nic = ric.size
            adj["fit_icbc"] = JetBundle(-(np.outer(sic, w) + np.outer(ric, lam)),
                                        np.zeros((nic, w.size, 2)), np.zeros((nic, w.size, 2)))
        fit_res = float(np.linalg.norm(J.T @ r))
        return LossResult(loss, asm.param_grad(jet_adjoints=adj), weights, fit_res)

    def soft_loss(self, params, head, phi, plan):
        nu = self.viscosity
        asm = self.assemble(params, phi, self._blocks(plan))
        w, cb = head[:-1], head[-1]
        adj, gw, gc, loss = {}, np.zeros_like(w), 0.0, 0.0
        names = [k for k in ("fit", "loss") if asm.has(k)]
        total = sum(asm.slices[k].stop - asm.slices[k].start for k in names)
        for k in names:
            j = asm.block_jet(k)
            u, ux, ut, uxx = _terms(j, w)
            u = u + cb
            e = ut + u * ux - nu * uxx
            de = 2.0 / total * e
            loss += float(e @ e) / total
            Jrow = j.first[:, :, 1] + u[:, None] * j.first[:, :, 0] + ux[:, None] * j.values - nu * j.second[:, :, 0]
            gw += Jrow.T @ de
            gc += float(ux @ de)
            adj[k] = self._point_adjoints(j, w, None, de * ux, de * u, de, -nu * de, None, None, None, None)
        names = [k for k in ("fit_icbc", "loss_icbc") if asm.has(k)]
        total = sum(asm.slices[k].stop - asm.slices[k].start for k in names)
        for k in names:
            j = asm.block_jet(k)
            e = j.values @ w + cb - asm.rhs[k]
            de = 2.0 / total * e
            loss += float(e @ e) / total
            gw += j.values.T @ de
            gc += float(de.sum())
            n = e.size
            adj[k] = JetBundle(np.outer(de, w), np.zeros((n, w.size, 2)), np.zeros((n, w.size, 2)))
        res = LossResult(loss, asm.param_grad(jet_adjoints=adj), CombinationWeights(w, None, "soft"))
        res.head_grad = np.concatenate([gw, [gc]])
        return res

    def eval_axes(self, grid_shape):
        return (oracles.periodic_axis(grid_shape[0]), oracles.unit_axis(grid_shape[1]))

    def oracle(self, phi, grid_shape):
        nx, nt = grid_shape
        return oracles.burgers_reference(phi, self.viscosity, nx, nt, refine=self.oracle_refine)

    def config(self):
        return {**super().config(), "viscosity": self.viscosity, "max_outer": self.max_outer,
                "oracle_refine": self.oracle_refine}


def _terms(jets: JetBundle, w):
    """(u, u_x, u_t, u_xx) for weights ``w``."""
    return (jets.values @ w, jets.first[:, :, 0] @ w, jets.first[:, :, 1] @ w, jets.second[:, :, 0] @ w)


PROBLEM_CLASSES = {"convection": Convection, "darcy": Darcy, "burgers": Burgers}


def make_problem(name: str, **kwargs) -> Problem:
    try:
        cls = PROBLEM_CLASSES[name]
    except KeyError:
        raise InputError(f"unknown problem {name!r}; valid: {', '.join(PROBLEM_CLASSES)}") from None
    kwargs.pop("problem", None)
    return cls(**kwargs)
