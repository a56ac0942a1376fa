import os
import subprocess
import sys

import numpy as np
import pytest

from pdecl import kernels
from pdecl._accel import use_numba


def _cases():
    rng = np.random.default_rng(0)
    x = np.linspace(0.0, 1.0, 60)
    beta = 1.0 + rng.random(60)
    inflow = np.sin(np.linspace(0.0, 1.0, 3 * 19 + 1))
    yield "lax_wendroff", (np.sin(np.pi * x), beta, 0.5 / beta.max(), inflow, 3, 20)
    u = rng.standard_normal((15, 15))
    yield "darcy_apply", (u, 1 + rng.random((16, 15)), 1 + rng.random((15, 16)), 256.0)
    xs = np.arange(48) / 48
    yield "burgers", (np.sin(2 * np.pi * xs), 0.01, 1 / 48, 1e-3, 3, 10)


PAIRS = {
    "lax_wendroff": (kernels.lax_wendroff_run_np, kernels.lax_wendroff_run_nb),
    "darcy_apply": (kernels.darcy_apply_np, kernels.darcy_apply_nb),
    "burgers": (kernels.burgers_run_np, kernels.burgers_run_nb),
}


@pytest.mark.parametrize("name, args", list(_cases()), ids=[c[0] for c in _cases()])
def test_numba_matches_numpy(name, args):
    f_np, f_nb = PAIRS[name]
    np.testing.assert_allclose(f_nb(*args), f_np(*args), rtol=1e-12, atol=1e-13)


def test_dispatch_uses_numba_by_default():
    assert use_numba()


def test_env_flag_selects_numpy_path():
    code = "from pdecl._accel import use_numba; print(use_numba())"
    env = dict(os.environ, PDECL_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
