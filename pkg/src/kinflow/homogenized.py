"""Macroscopic limit system: effective Stokes flow and the limit kinetic phase.

The limit fluid obeys the anisotropic nonlocal Stokes system with the
constant effective tensors from the cell problem; the same implicit
monolithic scheme as the fine-scale solver is reused with the
fourth-order tensor in place of the sampled matrix viscosity.

The limit kinetic equation is advanced on its invariant subspace of
states without fast-variable dependence, where the fast transport term
vanishes identically: particle positions are frozen exactly and only the
velocity relaxation v <- u0(x) + (v - u0(x)) e^(-dt) acts.  Starting from
fast-variable-independent initial data this subspace is the relevant one,
and the spatial marginal of the cloud is invariant bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    GridSpec,
    ScalarField,
    TensorField,
    VectorField,
    deposit_vector,
    divergence,
    interpolate_velocity,
    velocity_gradient,
)
from .homogenization import Corrector, EffectiveTensors
from .operators import Layout, SaddleSolver, SolverFailure, VelocityForm, tensor_viscosity_terms
from .particles import ParticleEnsemble, moments, relaxation_factors, dissipation_weight
from .stokes import MemoryHistory, StokesState, drag_impulse_payload, tensor_force


class HomogenizedSolver:
    """Implicit stepper for the effective-tensor Stokes system."""

    def __init__(self, grid: GridSpec, tensors: EffectiveTensors, dt=None, alpha=None):
        self.grid = grid
        self.tensors = tensors
        self.dt = grid.dt if dt is None else dt
        self.alpha = alpha
        self.layout = Layout(grid, "dirichlet")
        self.form = VelocityForm(self.layout, tensor_viscosity_terms(self.layout, tensors.C0))
        self.saddle = SaddleSolver(self.layout, self.form.K, self.dt,
                                   mass_scale=grid.cell_area)
        self._identity_form = None

    @property
    def identity_form(self):
        if self._identity_form is None:
            Id = np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2))
            self._identity_form = VelocityForm(
                self.layout, tensor_viscosity_terms(self.layout, Id, tol=1.0))
        return self._identity_form

    def grad_sq(self, u: VectorField):
        return self.identity_form.quadratic(self.layout.from_vector_field(u))

    def memory_stress(self, hist: MemoryHistory, t) -> TensorField:
        """Trapezoidal C1 * grad u0 using the tensor sequence on the dt lags."""
        tens = self.tensors
        n = len(hist.snapshots) - 1
        if abs(t - n * hist.dt) > 1e-12 * max(1.0, abs(t)):
            raise ValueError("history does not cover the requested time")
        g = self.grid
        out = np.zeros((g.nx, g.ny, 2, 2))
        if n == 0 or tens.C1_seq is None:
            return TensorField(g, out)
        w = np.ones(n + 1)
        w[0] = 0.5
        w[-1] = 0.5
        for m in range(n + 1):
            lag = n - m
            if lag >= len(tens.C1_seq):
                raise ValueError("C1 sequence shorter than the run")
            out += w[m] * hist.dt * np.einsum(
                "ijkl,xykl->xyij", tens.C1_seq[lag], hist.snapshots[m])
        return TensorField(g, out)

    def step(self, state: StokesState, hist: MemoryHistory = None,
             F: VectorField = None) -> StokesState:
        lay = self.layout
        g = self.grid
        area = g.cell_area
        rhs = area * lay.from_vector_field(state.u)
        if F is not None:
            rhs += self.dt * area * lay.from_vector_field(F)
        if hist is not None:
            rhs += self.dt * tensor_force(lay, self.memory_stress(hist, state.t))
        vel, p = self.saddle.solve(rhs)
        u_new = lay.to_vector_field(vel)
        dmax = float(np.abs(divergence(u_new).data).max())
        if dmax > 1e-8:
            raise SolverFailure("divergence audit failed: %.3e" % dmax, residual=dmax)
        new = StokesState(u_new, ScalarField(g, p.reshape(g.nx, g.ny)), state.t + self.dt)
        if hist is not None:
            hist.append(velocity_gradient(u_new))
        return new


def mean_vlasov_step(ens: ParticleEnsemble, u0: VectorField, dt) -> ParticleEnsemble:
    """Limit kinetic step: frozen positions, exact velocity relaxation."""
    if ens.count == 0:
        return ens
    ux, uy = interpolate_velocity(u0, ens.x[:, 0], ens.x[:, 1])
    U = np.stack([ux, uy], axis=1)
    decay, _ = relaxation_factors(dt)
    v_new = U + (ens.v - U) * decay
    return ParticleEnsemble(ens.x, v_new, ens.w)


@dataclass
class HomogenizedState:
    fluid: StokesState
    particles: ParticleEnsemble
    hist: MemoryHistory = None
    tensors: EffectiveTensors = None

    @property
    def t(self):
        return self.fluid.t


def step_homogenized(state: HomogenizedState, dt, solver: HomogenizedSolver):
    """One coupled limit step mirroring the fine-scale coupling order."""
    ens = state.particles
    if ens.count:
        ux, uy = interpolate_velocity(state.fluid.u, ens.x[:, 0], ens.x[:, 1])
        U = np.stack([ux, uy], axis=1)
        payload = drag_impulse_payload(ens.w, np.ones(ens.count), U, ens.v, dt)
        ens_new = mean_vlasov_step(ens, state.fluid.u, dt)
        F = deposit_vector(solver.grid, ens.x[:, 0], ens.x[:, 1],
                           payload[:, 0], payload[:, 1])
        gap_sq = np.sum((U - ens.v) ** 2, axis=1)
        diss = float(np.sum(ens.w * gap_sq)) * dissipation_weight(dt)
    else:
        ens_new, F, diss = ens, None, 0.0
    fluid_new = solver.step(state.fluid, hist=state.hist, F=F)
    return HomogenizedState(fluid_new, ens_new, state.hist, state.tensors), diss


class HomogenizedRunner:
    """Limit-system run with the same ledger structure as the fine-scale one."""

    def __init__(self, grid: GridSpec, tensors: EffectiveTensors,
                 ensemble: ParticleEnsemble, u0: VectorField, alpha=None,
                 with_memory=None):
        self.grid = grid
        self.solver = HomogenizedSolver(grid, tensors, dt=grid.dt, alpha=alpha)
        use_memory = tensors.C1_seq is not None if with_memory is None else with_memory
        hist = MemoryHistory(grid, grid.dt, velocity_gradient(u0)) if use_memory else None
        self.state = HomogenizedState(
            StokesState(u0.copy(), ScalarField(grid), 0.0), ensemble, hist, tensors)
        self.drag_dissipation_cum = 0.0
        self.viscous_dissipation_cum = 0.0

    def step(self):
        self.state, diss = step_homogenized(self.state, self.grid.dt, self.solver)
        self.drag_dissipation_cum += diss
        self.viscous_dissipation_cum += self.grid.dt * self.solver.grad_sq(self.state.fluid.u)

    def run(self, n_steps=None):
        n = self.grid.n_steps if n_steps is None else n_steps
        for _ in range(n):
            self.step()
        return self.state

    def total_energy(self):
        m = moments(self.state.particles)
        return m.mass + m.second_moment + self.state.fluid.u.l2() ** 2


# ----------------------------------------------------------------------
# first-order two-scale reconstruction
# ----------------------------------------------------------------------


def _periodic_bilinear(arr, x0, y0, dx, dy, px, py):
    """Bilinear interpolation on a periodic lattice (offsets x0, y0)."""
    nx, ny = arr.shape
    fx = (px - x0) / dx
    fy = (py - y0) / dy
    i0 = np.floor(fx).astype(np.int64)
    j0 = np.floor(fy).astype(np.int64)
    tx = fx - i0
    ty = fy - j0
    i0 %= nx
    j0 %= ny
    i1 = (i0 + 1) % nx
    j1 = (j0 + 1) % ny
    return ((1 - tx) * (1 - ty) * arr[i0, j0] + tx * (1 - ty) * arr[i1, j0]
            + (1 - tx) * ty * arr[i0, j1] + tx * ty * arr[i1, j1])


def corrector_reconstruction(u0: VectorField, correctors: Corrector, eps) -> VectorField:
    """Two-scale field u0(x) + eps * chi_{grad u0(x)}(x / eps).

    The macroscopic gradient is contracted against the four basis
    correctors by linearity and the cell solutions are sampled at the fast
    variable by periodic bilinear interpolation.
    """
    from .fields import interpolate_scalar

    grid = u0.grid
    G = velocity_gradient(u0)
    cell = correctors.assembly.grid
    out = u0.copy()

    # gradient components as cell-centered scalars for interpolation
    comps = {(k, l): ScalarField(grid, G.data[:, :, k, l]) for k in (0, 1) for l in (0, 1)}

    xu, yu = grid.u_face_coords()
    Xu, Yu = np.meshgrid(xu, yu, indexing="ij")
    yf_x, yf_y = np.mod(Xu / eps, 1.0), np.mod(Yu / eps, 1.0)
    pxu = np.clip(Xu, 0.0, grid.Lx).ravel()
    pyu = np.clip(Yu, 0.0, grid.Ly).ravel()
    xv, yv = grid.v_face_coords()
    Xv, Yv = np.meshgrid(xv, yv, indexing="ij")
    yg_x, yg_y = np.mod(Xv / eps, 1.0), np.mod(Yv / eps, 1.0)
    pxv = np.clip(Xv, 0.0, grid.Lx).ravel()
    pyv = np.clip(Yv, 0.0, grid.Ly).ravel()

    for idx in range(4):
        k, l = divmod(idx, 2)
        chi_u, chi_v = correctors.chi_grids(idx)
        g_u = interpolate_scalar(comps[(k, l)], pxu, pyu).reshape(Xu.shape)
        chi_at_u = _periodic_bilinear(chi_u, 0.0, 0.5 * cell.dy, cell.dx, cell.dy,
                                      yf_x, yf_y)
        out.u += eps * g_u * chi_at_u
        g_v = interpolate_scalar(comps[(k, l)], pxv, pyv).reshape(Xv.shape)
        chi_at_v = _periodic_bilinear(chi_v, 0.5 * cell.dx, 0.0, cell.dx, cell.dy,
                                      yg_x, yg_y)
        out.v += eps * g_v * chi_at_v
    return out
