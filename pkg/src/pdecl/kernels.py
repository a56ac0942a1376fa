"""Hot loops of the grid oracles.

Each kernel has a numba version and a vectorized numpy version with the same
signature. ``PDECL_DISABLE_NUMBA=1`` selects the numpy path globally; the
``_np``/``_nb`` variants stay importable for benchmarks and cross-checks.
"""
import numpy as np

from ._accel import njit, use_numba


# ----------------------------------------------------------------------------
# Lax-Wendroff for u_t + beta(x) u_x = 0 (advective form)

def lax_wendroff_run_np(u, beta, lam, inflow, n_sub, n_out):
    """Advance ``u`` through ``n_out - 1`` output intervals of ``n_sub`` steps.

    ``lam = dt / dx``; ``inflow[k]`` is the x = 0 value after internal step
    ``k``. Returns an (n_out, nx) array of snapshots.
    """
    nx = u.shape[0]
    out = np.empty((n_out, nx))
    out[0] = u
    bh = 0.5 * (beta[1:] + beta[:-1])
    bi = beta[1:-1]
    c_end = lam * beta[-1]
    u = u.copy()
    step = 0
    for j in range(1, n_out):
        for _ in range(n_sub):
            step += 1
            un = np.empty_like(u)
            du = u[1:] - u[:-1]
            un[1:-1] = (u[1:-1] - 0.5 * lam * bi * (u[2:] - u[:-2])
                        + 0.5 * lam * lam * bi * (bh[1:] * du[1:] - bh[:-1] * du[:-1]))
            un[0] = inflow[step]
            un[-1] = (u[-1] - 0.5 * c_end * (3.0 * u[-1] - 4.0 * u[-2] + u[-3])
                      + 0.5 * c_end * c_end * (u[-1] - 2.0 * u[-2] + u[-3]))
            u = un
        out[j] = u
    return out


@njit(cache=True)
def lax_wendroff_run_nb(u, beta, lam, inflow, n_sub, n_out):
    nx = u.shape[0]
    out = np.empty((n_out, nx))
    out[0, :] = u
    cur = u.copy()
    nxt = np.empty(nx)
    c_end = lam * beta[nx - 1]
    step = 0
    for j in range(1, n_out):
        for _ in range(n_sub):
            step += 1
            for i in range(1, nx - 1):
                bp = 0.5 * (beta[i] + beta[i + 1])
                bm = 0.5 * (beta[i] + beta[i - 1])
                nxt[i] = (cur[i] - 0.5 * lam * beta[i] * (cur[i + 1] - cur[i - 1])
                          + 0.5 * lam * lam * beta[i] * (bp * (cur[i + 1] - cur[i]) - bm * (cur[i] - cur[i - 1])))
            nxt[0] = inflow[step]
            nxt[nx - 1] = (cur[nx - 1] - 0.5 * c_end * (3.0 * cur[nx - 1] - 4.0 * cur[nx - 2] + cur[nx - 3])
                           + 0.5 * c_end * c_end * (cur[nx - 1] - 2.0 * cur[nx - 2] + cur[nx - 3]))
            tmp = cur
            cur = nxt
            nxt = tmp
        out[j, :] = cur
    return out


# ----------------------------------------------------------------------------
# flux-form 5-point operator for -div(k grad u), zero Dirichlet data

def darcy_apply_np(u, kx, ky, inv_h2):
    """``u`` is (n-2, n-2) interior values; ``kx`` is (n-1, n-2) x-face
    coefficients, ``ky`` is (n-2, n-1) y-face coefficients."""
    p = np.zeros((u.shape[0] + 2, u.shape[1] + 2))
    p[1:-1, 1:-1] = u
    fx = kx * (p[1:, 1:-1] - p[:-1, 1:-1])
    fy = ky * (p[1:-1, 1:] - p[1:-1, :-1])
    return -((fx[1:] - fx[:-1]) + (fy[:, 1:] - fy[:, :-1])) * inv_h2


@njit(cache=True)
def darcy_apply_nb(u, kx, ky, inv_h2):
    m0, m1 = u.shape
    out = np.empty((m0, m1))
    for i in range(m0):
        for j in range(m1):
            c = u[i, j]
            left = u[i - 1, j] if i > 0 else 0.0
            right = u[i + 1, j] if i < m0 - 1 else 0.0
            down = u[i, j - 1] if j > 0 else 0.0
            up = u[i, j + 1] if j < m1 - 1 else 0.0
            fxp = kx[i + 1, j] * (right - c)
            fxm = kx[i, j] * (c - left)
            fyp = ky[i, j + 1] * (up - c)
            fym = ky[i, j] * (c - down)
            out[i, j] = -((fxp - fxm) + (fyp - fym)) * inv_h2
    return out


# ----------------------------------------------------------------------------
# Burgers: central conservative convection (AB2) + Crank-Nicolson diffusion,
# periodic grid

def burgers_run_np(u, visc, dx, dt, n_sub, n_out):
    n = u.shape[0]
    out = np.empty((n_out, n))
    out[0] = u
    a = 0.5 * visc * dt / (dx * dx)
    k = np.arange(n // 2 + 1)
    lap_eig = 2.0 * np.cos(2.0 * np.pi * k / n) - 2.0
    denom = 1.0 - a * lap_eig
    u = u.copy()
    prev_conv = None
    for j in range(1, n_out):
        for _ in range(n_sub):
            f = 0.5 * u * u
            conv = (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * dx)
            ext = conv if prev_conv is None else 1.5 * conv - 0.5 * prev_conv
            prev_conv = conv
            rhs = u + a * (np.roll(u, -1) - 2.0 * u + np.roll(u, 1)) - dt * ext
            u = np.fft.irfft(np.fft.rfft(rhs) / denom, n)
        out[j] = u
    return out


@njit(cache=True)
def _cyclic_solve(diag, off, rhs, work_c, work_d, z):
    # Symmetric cyclic tridiagonal with constant diagonal and off-diagonal,
    # solved by Sherman-Morrison around a Thomas sweep.
    n = rhs.shape[0]
    gamma = -diag
    # modified diagonal
    b0 = diag - gamma
    bn = diag - off * off / gamma
    # Thomas on (b, rhs)
    work_c[0] = off / b0
    work_d[0] = rhs[0] / b0
    for i in range(1, n):
        bi = bn if i == n - 1 else diag
        m = bi - off * work_c[i - 1]
        work_c[i] = off / m
        work_d[i] = (rhs[i] - off * work_d[i - 1]) / m
    x = np.empty(n)
    x[n - 1] = work_d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = work_d[i] - work_c[i] * x[i + 1]
    # Thomas on (b, u) with u = (gamma, 0, ..., off)
    work_d[0] = gamma / b0
    for i in range(1, n):
        bi = bn if i == n - 1 else diag
        m = bi - off * work_c[i - 1]
        ui = off if i == n - 1 else 0.0
        work_d[i] = (ui - off * work_d[i - 1]) / m
    z[n - 1] = work_d[n - 1]
    for i in range(n - 2, -1, -1):
        z[i] = work_d[i] - work_c[i] * z[i + 1]
    fact = (x[0] + off * x[n - 1] / gamma) / (1.0 + z[0] + off * z[n - 1] / gamma)
    for i in range(n):
        x[i] -= fact * z[i]
    return x


@njit(cache=True)
def burgers_run_nb(u, visc, dx, dt, n_sub, n_out):
    n = u.shape[0]
    out = np.empty((n_out, n))
    out[0, :] = u
    a = 0.5 * visc * dt / (dx * dx)
    cur = u.copy()
    conv = np.empty(n)
    prev = np.empty(n)
    rhs = np.empty(n)
    wc = np.empty(n)
    wd = np.empty(n)
    z = np.empty(n)
    first = True
    for j in range(1, n_out):
        for _ in range(n_sub):
            for i in range(n):
                ip = cur[(i + 1) % n]
                im = cur[(i - 1) % n]
                conv[i] = (0.5 * ip * ip - 0.5 * im * im) / (2.0 * dx)
            for i in range(n):
                ext = conv[i] if first else 1.5 * conv[i] - 0.5 * prev[i]
                ip = cur[(i + 1) % n]
                im = cur[(i - 1) % n]
                rhs[i] = cur[i] + a * (ip - 2.0 * cur[i] + im) - dt * ext
            first = False
            for i in range(n):
                prev[i] = conv[i]
            cur = _cyclic_solve(1.0 + 2.0 * a, -a, rhs, wc, wd, z)
        out[j, :] = cur
    return out


def lax_wendroff_run(*args):
    return lax_wendroff_run_nb(*args) if use_numba() else lax_wendroff_run_np(*args)


def darcy_apply(*args):
    return darcy_apply_nb(*args) if use_numba() else darcy_apply_np(*args)


def burgers_run(*args):
    return burgers_run_nb(*args) if use_numba() else burgers_run_np(*args)
