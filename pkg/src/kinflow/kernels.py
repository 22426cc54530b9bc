"""Tight particle/grid transfer loops.

Compiled with numba when available (single fused pass per particle,
sequential deterministic accumulation); otherwise the vectorized numpy
routines in fields.py are used.  Both share the same stencil convention:
clipped base index, unclipped fraction (linear extrapolation at walls).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]


@njit(cache=True)
def _base(f, n_pts):
    i = int(np.floor(f))
    if i < 0:
        i = 0
    elif i > n_pts - 2:
        i = n_pts - 2
    return i


@njit(cache=True)
def interp_staggered(u, v, px, py, dx, dy):
    """(u, v) bilinear at particle positions on the MAC layout."""
    n = px.size
    nxp1, ny = u.shape
    nx, nyp1 = v.shape
    out_u = np.empty(n)
    out_v = np.empty(n)
    for k in range(n):
        fx = px[k] / dx
        fy = py[k] / dy
        # u component: faces at (i, j + 1/2)
        i = _base(fx, nxp1)
        j = _base(fy - 0.5, ny)
        tx = fx - i
        ty = (fy - 0.5) - j
        out_u[k] = ((1 - tx) * (1 - ty) * u[i, j] + tx * (1 - ty) * u[i + 1, j]
                    + (1 - tx) * ty * u[i, j + 1] + tx * ty * u[i + 1, j + 1])
        # v component: faces at (i + 1/2, j)
        i = _base(fx - 0.5, nx)
        j = _base(fy, nyp1)
        tx = (fx - 0.5) - i
        ty = fy - j
        out_v[k] = ((1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i + 1, j]
                    + (1 - tx) * ty * v[i, j + 1] + tx * ty * v[i + 1, j + 1])
    return out_u, out_v


@njit(cache=True)
def scatter_staggered(acc_u, acc_v, px, py, fx_payload, fy_payload, dx, dy):
    """Accumulate vector payloads on the face grids (sequential order)."""
    n = px.size
    nxp1, ny = acc_u.shape
    nx, nyp1 = acc_v.shape
    for k in range(n):
        fx = px[k] / dx
        fy = py[k] / dy
        i = _base(fx, nxp1)
        j = _base(fy - 0.5, ny)
        tx = fx - i
        ty = (fy - 0.5) - j
        p = fx_payload[k]
        acc_u[i, j] += (1 - tx) * (1 - ty) * p
        acc_u[i + 1, j] += tx * (1 - ty) * p
        acc_u[i, j + 1] += (1 - tx) * ty * p
        acc_u[i + 1, j + 1] += tx * ty * p
        i = _base(fx - 0.5, nx)
        j = _base(fy, nyp1)
        tx = (fx - 0.5) - i
        ty = fy - j
        p = fy_payload[k]
        acc_v[i, j] += (1 - tx) * (1 - ty) * p
        acc_v[i + 1, j] += tx * (1 - ty) * p
        acc_v[i, j + 1] += (1 - tx) * ty * p
        acc_v[i + 1, j + 1] += tx * ty * p


@njit(cache=True)
def scatter_cells(acc, px, py, w, dx, dy):
    """Accumulate scalar payloads on the cell-center grid."""
    n = px.size
    nx, ny = acc.shape
    for k in range(n):
        fx = px[k] / dx - 0.5
        fy = py[k] / dy - 0.5
        i = _base(fx, nx)
        j = _base(fy, ny)
        tx = fx - i
        ty = fy - j
        p = w[k]
        acc[i, j] += (1 - tx) * (1 - ty) * p
        acc[i + 1, j] += tx * (1 - ty) * p
        acc[i, j + 1] += (1 - tx) * ty * p
        acc[i + 1, j + 1] += tx * ty * p


@njit(cache=True)
def coupled_particle_phase(x, v, w, Ux, Uy, eps, dt, Lx, Ly, decay, pos_weight,
                           payload_x, payload_y):
    """Fused unregularized coupling phase: diagnostics, impulse, push.

    Updates x, v in place (relaxation against the frozen drift followed by
    specular mirroring) and fills the drag-impulse payload arrays.
    Returns (mass, m2_old, max_speed_old, diss_sum, weighted_diss_sum,
    dp_x, dp_y, stuck) accumulated in particle order.
    """
    n = x.shape[0]
    scale_t = pos_weight / dt
    mass = 0.0
    m2 = 0.0
    vmax = 0.0
    diss = 0.0
    wdiss = 0.0
    dpx = 0.0
    dpy = 0.0
    stuck = 0
    for k in range(n):
        wk = w[k]
        mass += wk
        speed2 = v[k, 0] * v[k, 0] + v[k, 1] * v[k, 1]
        m2 += wk * speed2
        av = abs(v[k, 0])
        if av > vmax:
            vmax = av
        av = abs(v[k, 1])
        if av > vmax:
            vmax = av
        gx = Ux[k] - v[k, 0]
        gy = Uy[k] - v[k, 1]
        gap2 = gx * gx + gy * gy
        diss += wk * gap2
        sp = np.sqrt(speed2)
        wdiss += wk * gap2 / ((1.0 + sp) * (1.0 + sp))
        scale = wk * scale_t
        payload_x[k] = -scale * gx
        payload_y[k] = -scale * gy
        for a in range(2):
            Ua = Ux[k] if a == 0 else Uy[k]
            dva = v[k, a] - Ua
            v_new = Ua + dva * decay
            if a == 0:
                dpx += wk * (v_new - v[k, a])
            else:
                dpy += wk * (v_new - v[k, a])
            xa = x[k, a] + eps * (Ua * dt + dva * pos_weight)
            v[k, a] = v_new
            L = Lx if a == 0 else Ly
            ok = False
            for _ in range(8):
                if xa < 0.0:
                    xa = -xa
                    v[k, a] = -v[k, a]
                elif xa > L:
                    xa = 2.0 * L - xa
                    v[k, a] = -v[k, a]
                else:
                    ok = True
                    break
            if not ok:
                stuck += 1
            x[k, a] = xa
    return mass, m2, vmax, diss, wdiss, dpx, dpy, stuck


@njit(cache=True)
def push_reflect(x, v, U, eps, dt, Lx, Ly, decay, pos_weight):
    """Relaxation push with specular wall mirroring, in place.

    Returns the number of particles that needed more reflection sweeps
    than the hard cap (0 under the CFL audit).
    """
    n = x.shape[0]
    stuck = 0
    for k in range(n):
        for a in range(2):
            dva = v[k, a] - U[k, a]
            v[k, a] = U[k, a] + dva * decay
            xa = x[k, a] + eps * (U[k, a] * dt + dva * pos_weight)
            L = Lx if a == 0 else Ly
            ok = False
            for _ in range(8):
                if xa < 0.0:
                    xa = -xa
                    v[k, a] = -v[k, a]
                elif xa > L:
                    xa = 2.0 * L - xa
                    v[k, a] = -v[k, a]
                else:
                    ok = True
                    break
            if not ok:
                stuck += 1
            x[k, a] = xa
    return stuck
