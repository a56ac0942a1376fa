"""Ablations on a trained model: error on fitted vs unfitted points, the
learned basis against cubic interpolation, and operation-count scaling."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .operators import ConstraintSystem, ParameterField, sample_points
from .layer import fit_linear
from .oracles import cubic_interpolate, lax_wendroff_convection, unit_axis
from .training import Model, relative_l2


def _grid_points(axes):
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class HistogramReport:
    fitted_errors: np.ndarray
    unfitted_errors: np.ndarray
    bin_edges: np.ndarray
    fitted_counts: np.ndarray
    unfitted_counts: np.ndarray
    summary: dict = field(default_factory=dict)


def fitted_vs_unfitted_histogram(model: Model, phi: ParameterField, oracle, n_fit_points: int,
                                 seed: int = 0, bins: int = 30) -> HistogramReport:
    """Fit on ``n_fit_points`` nodes of the oracle grid; compare pointwise errors.

    ``n_fit_points`` equal to the grid size leaves the unfitted set empty.
    """
    if model.mode != "hard":
        raise InputError("the fitted/unfitted study needs a hard-constrained model")
    pts = _grid_points(oracle.axes)
    target = oracle.values.ravel()
    if not 1 <= n_fit_points <= pts.shape[0]:
        raise InputError(f"n_fit_points must be between 1 and the grid size {pts.shape[0]}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(pts.shape[0], size=n_fit_points, replace=False))
    cfg = model.config
    tol = cfg.tol if cfg else 1e-8
    damping = cfg.damping if cfg else 0.0
    weights = model.problem.fit(model.params, phi, pts[idx], tol=tol, damping=damping)
    pred = model.problem.predict(model.params, weights.omega, phi, pts)
    err = np.abs(pred - target)
    mask = np.zeros(pts.shape[0], dtype=bool)
    mask[idx] = True
    fitted, unfitted = err[mask], err[~mask]
    top = float(err.max()) if err.size and err.max() > 0 else 1.0
    edges = np.linspace(0.0, top, bins + 1)
    fc, _ = np.histogram(fitted, edges)
    uc, _ = np.histogram(unfitted, edges)
    summary = {"n_fitted": int(fitted.size), "n_unfitted": int(unfitted.size),
               "median_fitted": float(np.median(fitted)),
               "mean_fitted": float(np.mean(fitted))}
    if unfitted.size:
        summary.update(median_unfitted=float(np.median(unfitted)), mean_unfitted=float(np.mean(unfitted)),
                       median_ratio=float(np.median(unfitted) / max(np.median(fitted), 1e-300)))
    return HistogramReport(fitted, unfitted, edges, fc, uc, summary)


def interpolation_ablation(model: Model, phi: ParameterField, fit_count: int, grids, seed: int = 0,
                           oracles=None) -> list:
    """Learned basis vs cubic interpolation of the same fitted values.

    Weights are fit at ``fit_count`` uniform points (plus the problem's fixed
    boundary points). For each grid the model is evaluated directly, and the
    model's values at the fitted points are interpolated onto the grid; both
    are scored against the reference solution. ``oracles`` may supply the
    reference grids; otherwise they are computed.
    """
    if model.mode != "hard":
        raise InputError("the interpolation study needs a hard-constrained model")
    problem = model.problem
    pts = sample_points(((0.0, 1.0), (0.0, 1.0)), fit_count, seed, "interior")
    cfg = model.config
    tol = cfg.tol if cfg else 1e-8
    damping = cfg.damping if cfg else 0.0
    weights = problem.fit(model.params, phi, pts, tol=tol, damping=damping)
    data_pts = pts
    boundary = problem.fixed_icbc_points()
    if boundary is not None:
        data_pts = np.vstack([pts, boundary])
    data_vals = problem.predict(model.params, weights.omega, phi, data_pts)
    out = []
    for k, shape in enumerate(grids):
        ref = oracles[k] if oracles is not None else problem.oracle(phi, shape)
        q = _grid_points(ref.axes)
        direct = problem.predict(model.params, weights.omega, phi, q).reshape(ref.values.shape)
        t0 = time.perf_counter()
        interp = cubic_interpolate(data_pts, data_vals, q).reshape(ref.values.shape)
        t_interp = time.perf_counter() - t0
        e_model = relative_l2(direct, ref.values)
        e_interp = relative_l2(interp, ref.values)
        out.append({"grid": list(ref.values.shape), "fit_count": int(fit_count),
                    "model_relative_l2": e_model, "interpolation_relative_l2": e_interp,
                    "improvement": 1.0 - e_model / e_interp if e_interp > 0 else 0.0,
                    "interpolation_seconds": t_interp})
    return out


# ----------------------------------------------------------------------------

def operation_counts(n: int, N: int, nx: int, nt: int) -> dict:
    """Leading-order costs: dense least squares vs a tridiagonal time-stepper."""
    if min(n, N, nx, nt) < 1:
        raise InputError("counts must be positive")
    layer = max(n, N) ** 2 * min(n, N)
    stepper = nx * nt
    if layer < stepper:
        verdict, favored = "less", "pde-cl"
    elif layer == stepper:
        verdict, favored = "equal", "tie"
    else:
        verdict, favored = "greater", "numerical"
    return {"n": n, "N": N, "grid": [nx, nt], "pdecl_ops": layer, "numerical_ops": stepper,
            "verdict": verdict, "favored": favored}


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def time_fit_linear(n: int, N: int, seed: int = 0, repeats: int = 5) -> float:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, N))
    b = rng.standard_normal(n)
    system = ConstraintSystem(A, b, np.zeros((n, 2)))
    return _median_time(lambda: fit_linear(system), repeats)


def time_lax_wendroff(nx: int, nt: int, repeats: int = 3) -> float:
    beta = ParameterField("wavespeed", (unit_axis(nx),), np.ones(nx))
    lax_wendroff_convection(beta, nx, nt)  # compile outside the timing
    return _median_time(lambda: lax_wendroff_convection(beta, nx, nt), repeats)


def complexity_report(n: int, N: int, grid_shapes, measure: bool = True, repeats: int = 3) -> list:
    """Operation counts, verdict and (optionally) measured wall-clock per grid."""
    out = []
    t_fit = time_fit_linear(n, N, repeats=repeats) if measure else None
    for nx, nt in grid_shapes:
        rec = operation_counts(n, N, nx, nt)
        if measure:
            rec["fit_linear_seconds"] = t_fit
            rec["lax_wendroff_seconds"] = time_lax_wendroff(nx, nt, repeats)
        out.append(rec)
    return out


def fit_scaling(sizes=(50, 100, 200), repeats: int = 5) -> dict:
    """Wall-clock of square ``fit_linear`` solves and the fitted log-log slope."""
    times = [time_fit_linear(s, s, seed=s, repeats=repeats) for s in sizes]
    slope = float(np.polyfit(np.log(sizes), np.log(times), 1)[0])
    return {"sizes": list(sizes), "seconds": times, "exponent": slope}
