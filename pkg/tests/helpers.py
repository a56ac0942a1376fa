"""Small shared fixtures: toy bilevel instances and their FD checks."""
import numpy as np

from pdecl.fields import generate_field
from pdecl.linalg import central_difference_gradient, relative_discrepancy
from pdecl.network import init_params
from pdecl.problems import make_problem

# (problem, hidden/N layer widths, n_fit, n_loss, problem kwargs, FD tol)
# hidden >= N keeps the zero-bias basis matrices full rank, so the inner
# solution is a smooth function of the parameters and FD is meaningful.
TOYS = {
    "convection-underdetermined": ("convection", [10, 6], 2, 8, dict(n_features=0, n_icbc=2), 1e-10),
    "convection-overdetermined": ("convection", [11, 5], 10, 8, dict(n_features=0, n_icbc=4), 1e-10),
    "convection-eqqp": ("convection", [11, 5], 3, 8, dict(n_features=0, n_icbc=6, fit_mode="eqqp"), 1e-10),
    "darcy-underdetermined": ("darcy", [10, 5], 3, 8, {}, 1e-10),
    "darcy-overdetermined": ("darcy", [10, 5], 10, 8, {}, 1e-10),
    "burgers": ("burgers", [6, 6], 12, 8, dict(n_features=2, n_icbc=4), 1e-11),
}


def toy_instance(name, seed):
    problem_name, layers, n_fit, n_loss, kwargs, tol = TOYS[name]
    problem = make_problem(problem_name, **kwargs)
    params = init_params([problem.n_inputs] + layers, seed=seed)
    grid = (16, 16) if problem_name == "darcy" else (32,)
    phi = generate_field(problem_name, seed, grid)
    plan = problem.plan(n_fit, n_loss, seed)
    return problem, params, phi, plan, tol


def hard_gradient_discrepancy(name, seed, step=1e-5):
    problem, params, phi, plan, tol = toy_instance(name, seed)
    res = problem.hard_loss(params, phi, plan, tol=tol)
    f = lambda th: problem.hard_loss(params.with_flat(th), phi, plan, tol=tol).loss
    num = central_difference_gradient(f, params.flat(), step)
    return relative_discrepancy(res.grad.flat(), num), params.n_params


def soft_gradient_discrepancy(name, seed, step=1e-5):
    problem, params, phi, plan, _ = toy_instance(name, seed)
    head = np.random.default_rng(seed).standard_normal(params.n_outputs + 1)
    n = params.n_params
    res = problem.soft_loss(params, head, phi, plan)
    f = lambda x: problem.soft_loss(params.with_flat(x[:n]), x[n:], phi, plan).loss
    x0 = np.concatenate([params.flat(), head])
    num = central_difference_gradient(f, x0, step)
    return relative_discrepancy(np.concatenate([res.grad.flat(), res.head_grad]), num)

# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE = []
