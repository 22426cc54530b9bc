"""Manufactured-solution verification problems.

The reference solution is built from a stream function so it is exactly
divergence free and vanishes on the walls together with its tangential
derivative; the forcing F = du/dt - div(grad u) + grad p is derived
symbolically, which keeps the oracle independent of the solver's
discretization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import sympy as sp

from .coefficients import constant_coefficient
from .fields import GridSpec, ScalarField, VectorField
from .stokes import NonlocalStokesSolver, StokesState


@dataclass
class MMSProblem:
    velocity: Callable  # (t, X, Y) -> (u, v)
    forcing: Callable   # (t, X, Y) -> (Fx, Fy)


def stokes_mms_problem() -> MMSProblem:
    """Swirl decaying in time, unit viscosity, smooth pressure."""
    x, y, t = sp.symbols("x y t")
    psi = sp.cos(t) * (sp.sin(sp.pi * x) * sp.sin(sp.pi * y)) ** 2 / sp.pi
    um = sp.diff(psi, y)
    vm = -sp.diff(psi, x)
    pm = sp.cos(t) * sp.cos(sp.pi * x) * sp.cos(sp.pi * y)
    Fx = sp.diff(um, t) - (sp.diff(um, x, 2) + sp.diff(um, y, 2)) + sp.diff(pm, x)
    Fy = sp.diff(vm, t) - (sp.diff(vm, x, 2) + sp.diff(vm, y, 2)) + sp.diff(pm, y)
    u_f = sp.lambdify((t, x, y), um, "numpy")
    v_f = sp.lambdify((t, x, y), vm, "numpy")
    fx_f = sp.lambdify((t, x, y), Fx, "numpy")
    fy_f = sp.lambdify((t, x, y), Fy, "numpy")
    return MMSProblem(
        velocity=lambda tt, X, Y: (u_f(tt, X, Y), v_f(tt, X, Y)),
        forcing=lambda tt, X, Y: (fx_f(tt, X, Y), fy_f(tt, X, Y)),
    )


def sample_staggered(grid: GridSpec, fun, tt) -> VectorField:
    """Evaluate an analytic vector field on the staggered faces."""
    out = VectorField(grid)
    xu, yu = grid.u_face_coords()
    Xu, Yu = np.meshgrid(xu, yu, indexing="ij")
    xv, yv = grid.v_face_coords()
    Xv, Yv = np.meshgrid(xv, yv, indexing="ij")
    fu, _ = fun(tt, Xu, Yu)
    _, fv = fun(tt, Xv, Yv)
    out.u = np.asarray(fu, dtype=float)
    out.v = np.asarray(fv, dtype=float)
    return out


def mms_trajectory(problem: MMSProblem, nx, dt, T):
    """Run the solver against the manufactured forcing; snapshots by time."""
    grid = GridSpec(nx=nx, ny=nx, dt=dt, T=T)
    solver = NonlocalStokesSolver(grid, constant_coefficient(1.0), None, dt=dt)
    state = StokesState(sample_staggered(grid, problem.velocity, 0.0), ScalarField(grid), 0.0)
    snaps = {0.0: state.u.copy()}
    for _ in range(grid.n_steps):
        F = sample_staggered(grid, problem.forcing, state.t + dt)
        state = solver.step(state, F=F)
        snaps[round(state.t, 10)] = state.u.copy()
    return snaps


def mms_l2q_error(problem: MMSProblem, nx, dt, T):
    """Space-time L2 error of the discrete run against the exact solution."""
    grid = GridSpec(nx=nx, ny=nx, dt=dt, T=T)
    snaps = mms_trajectory(problem, nx, dt, T)
    err2 = 0.0
    for n in range(1, grid.n_steps + 1):
        tt = round(n * dt, 10)
        ref = sample_staggered(grid, problem.velocity, tt)
        got = snaps[tt]
        err2 += dt * ((np.sum((got.u - ref.u) ** 2) + np.sum((got.v - ref.v) ** 2))
                      * grid.cell_area)
    return float(np.sqrt(err2))
