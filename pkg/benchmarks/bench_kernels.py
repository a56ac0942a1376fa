"""Wall-clock of the numba kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py``. Each kernel is run once
before timing so compilation is excluded, and the two paths are checked to
agree before they are timed.
"""
from __future__ import annotations

import argparse
import json
import time

import numpy as np

from pdecl import kernels
from pdecl._accel import use_numba


def _median_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases(scale: int):
    rng = np.random.default_rng(0)
    nx = 200 * scale
    x = np.linspace(0.0, 1.0, nx)
    beta = 1.0 + rng.random(nx)
    lam = 0.5 / beta.max()
    n_sub, n_out = 4, 100 * scale
    inflow = np.sin(np.linspace(0.0, 1.0, n_sub * (n_out - 1) + 1))
    yield "lax_wendroff", (np.sin(np.pi * x), beta, lam, inflow, n_sub, n_out)

    n = 64 * scale + 1
    u = rng.standard_normal((n - 2, n - 2))
    kx = 1.0 + rng.random((n - 1, n - 2))
    ky = 1.0 + rng.random((n - 2, n - 1))
    yield "darcy_apply", (u, kx, ky, float((n - 1) ** 2))

    m = 128 * scale
    xs = np.arange(m) / m
    yield "burgers", (np.sin(2 * np.pi * xs), 0.01, 1.0 / m, 1e-4, 4, 50 * scale)


KERNELS = {
    "lax_wendroff": (kernels.lax_wendroff_run_np, kernels.lax_wendroff_run_nb),
    "darcy_apply": (kernels.darcy_apply_np, kernels.darcy_apply_nb),
    "burgers": (kernels.burgers_run_np, kernels.burgers_run_nb),
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1, help="problem-size multiplier")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    if not use_numba():
        print("numba is disabled; only the numpy path is timed")
    for name, call_args in cases(args.scale):
        f_np, f_nb = KERNELS[name]
        rec = {"kernel": name, "scale": args.scale}
        ref = f_np(*call_args)
        rec["numpy_seconds"] = _median_time(lambda: f_np(*call_args), args.repeats)
        if use_numba():
            out = f_nb(*call_args)
            rec["max_abs_difference"] = float(np.max(np.abs(out - ref)))
            rec["numba_seconds"] = _median_time(lambda: f_nb(*call_args), args.repeats)
            rec["speedup"] = rec["numpy_seconds"] / rec["numba_seconds"]
        print(json.dumps(rec))


if __name__ == "__main__":
    main()
