"""Interleaved particle/fluid stepping for the fine-scale problem.

Coupling order per step: interpolate the current fluid velocity at the
particles (optionally mollified), push the ensemble, deposit the drag at
the half-updated positions, then take the implicit fluid step.  The drag
deposited is the exact momentum impulse of the relaxation sub-step, so
fluid and particle momentum books close to roundoff away from the walls.

The run keeps the discrete counterparts of the a-priori energy ledger:
kinetic and fluid energy, cumulative drag and viscous dissipation, the
Young-inequality credit of the memory stress, and the L1 drag bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .coefficients import OscillatoryCoefficient, sample_coefficient
from .fields import GridSpec, VectorField, deposit_vector, interpolate_velocity
from .particles import (
    ParticleEnsemble,
    RegularizationParams,
    cfl_audit,
    dissipation_weight,
    moments,
    push_with_drift,
    relaxation_factors,
)
from .stokes import (
    MemoryHistory,
    NonlocalStokesSolver,
    StokesState,
    drag_impulse_payload,
    mollify_field,
)


@dataclass
class CoupledState:
    """Fluid, particles and shared clock of the fine-scale system."""

    fluid: StokesState
    particles: ParticleEnsemble
    hist: MemoryHistory = None
    eps: float = 1.0
    params: RegularizationParams = field(default_factory=RegularizationParams)

    @property
    def t(self):
        return self.fluid.t

    def copy(self):
        return CoupledState(self.fluid.copy(), self.particles.copy(), self.hist,
                            self.eps, self.params)


@dataclass
class EnergyReport:
    """Discrete energy-ledger snapshot; all entries finite and nonnegative."""

    fluid_ke: float
    particle_ke: float
    mass: float
    second_moment: float
    drag_dissipation_cum: float
    viscous_dissipation_cum: float
    drag_l1_cum: float

    def total_energy(self):
        """Discrete (1 + |v|^2) f moment plus fluid energy."""
        return self.mass + self.second_moment + self.fluid_ke

    def validate(self):
        vals = [self.fluid_ke, self.particle_ke, self.mass, self.second_moment,
                self.drag_dissipation_cum, self.viscous_dissipation_cum, self.drag_l1_cum]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise FloatingPointError("energy ledger left the admissible range")
        return self


@dataclass
class StepDiagnostics:
    """Per-step bookkeeping used by the ledgers and the momentum audit."""

    drag_injected: np.ndarray      # dt * integral of deposited drag (interior faces)
    particle_dp: np.ndarray        # total particle momentum change
    drag_dissipation: float        # int over the step of sum w |U - v|^2
    weighted_drag_dissipation: float
    drag_l1: float
    mass: float = 0.0              # cloud mass and |v|^2 moment before the step
    second_moment: float = 0.0


def _fused_particle_phase(state, dt, solver):
    """Single-pass kernel path for the unregularized coupling."""
    from . import kernels

    ens = state.particles
    grid = solver.grid
    ux, uy = interpolate_velocity(state.fluid.u, ens.x[:, 0], ens.x[:, 1], check=False)
    if not (np.all(np.isfinite(ux)) and np.all(np.isfinite(uy))):
        raise FloatingPointError("non-finite drift values reached the particle push")
    x_new = ens.x.copy()
    v_new = ens.v.copy()
    payload_x = np.empty(ens.count)
    payload_y = np.empty(ens.count)
    decay, pw = relaxation_factors(dt)
    mass, m2, vmax, diss, wdiss, dpx, dpy, stuck = kernels.coupled_particle_phase(
        x_new, v_new, ens.w, ux, uy, state.eps, dt, grid.Lx, grid.Ly, decay, pw,
        payload_x, payload_y)
    if stuck:
        raise RuntimeError("%d particles escaped the reflection sweep cap" % stuck)
    if state.eps * vmax * dt > min(grid.dx, grid.dy):
        import warnings

        warnings.warn("particle CFL exceeded: eps*|v|*dt = %.3g > %.3g"
                      % (state.eps * vmax * dt, min(grid.dx, grid.dy)), RuntimeWarning)
    ens_new = ParticleEnsemble(x_new, v_new, ens.w)
    F = deposit_vector(grid, x_new[:, 0], x_new[:, 1], payload_x, payload_y, check=False)
    diss *= dissipation_weight(dt) / dt
    return ens_new, F, np.array([dpx, dpy]), diss, wdiss, mass, m2


def step_coupled(state: CoupledState, dt, solver: NonlocalStokesSolver):
    """Advance particles and fluid by one step; returns (state, diagnostics)."""
    from . import kernels

    ens = state.particles
    grid = solver.grid
    params = state.params
    if ens.count and not params.active and kernels.HAVE_NUMBA:
        ens_new, F, particle_dp, diss, wdiss, mass, m2 = _fused_particle_phase(
            state, dt, solver)
    elif ens.count:
        cfl_audit(ens, state.eps, dt, grid)
        m = moments(ens)
        mass, m2 = m.mass, m.second_moment
        drift_field = mollify_field(state.fluid.u, params) if params.active else state.fluid.u
        ux, uy = interpolate_velocity(drift_field, ens.x[:, 0], ens.x[:, 1])
        U = np.stack([ux, uy], axis=1)
        gamma = params.gamma(ens.v) if params.active else np.ones(ens.count)
        payload = drag_impulse_payload(ens.w, gamma, U, ens.v, dt)
        gap = U - ens.v
        gap_sq = np.sum(gap**2, axis=1)
        diss = float(np.sum(ens.w * gap_sq)) * dissipation_weight(dt) / dt
        wdiss = float(np.sum(ens.w * gap_sq / (1.0 + np.linalg.norm(ens.v, axis=1)) ** 2))
        ens_new = push_with_drift(ens, U, state.eps, dt, grid)
        particle_dp = (ens.w[:, None] * (ens_new.v - ens.v)).sum(axis=0)
        F = deposit_vector(grid, ens_new.x[:, 0], ens_new.x[:, 1], payload[:, 0], payload[:, 1])
    else:
        ens_new, F = ens, None
        particle_dp = np.zeros(2)
        diss = wdiss = mass = m2 = 0.0
    if F is not None:
        area = grid.cell_area
        drag_injected = dt * area * np.array(
            [np.sum(F.u[1:-1, :]), np.sum(F.v[:, 1:-1])])
        drag_l1 = float(np.sum(np.hypot(
            0.5 * (F.u[1:, :] + F.u[:-1, :]), 0.5 * (F.v[:, 1:] + F.v[:, :-1])))) * area
    else:
        drag_injected = np.zeros(2)
        drag_l1 = 0.0
    fluid_new = solver.step(state.fluid, hist=state.hist, F=F)
    new = CoupledState(fluid_new, ens_new, state.hist, state.eps, params)
    diag = StepDiagnostics(drag_injected, particle_dp, dt * diss, dt * wdiss,
                           dt * drag_l1, mass, m2)
    return new, diag


class CoupledRunner:
    """Owns a coupled run: cached solver, state and cumulative ledgers."""

    def __init__(self, grid: GridSpec, A0: OscillatoryCoefficient, A1,
                 ensemble: ParticleEnsemble, u0: VectorField, eps,
                 params: RegularizationParams = None, record_particles=False):
        from .fields import ScalarField, velocity_gradient

        self.grid = grid
        self.solver = NonlocalStokesSolver(grid, A0, A1, eps=eps, dt=grid.dt)
        hist = None
        if A1 is not None:
            hist = MemoryHistory(grid, grid.dt, velocity_gradient(u0))
        self.state = CoupledState(
            StokesState(u0.copy(), ScalarField(grid), 0.0), ensemble, hist, eps,
            params or RegularizationParams())
        self.drag_dissipation_cum = 0.0
        self.weighted_drag_cum = 0.0
        self.viscous_dissipation_cum = 0.0
        self.drag_l1_cum = 0.0
        self.time_moment_cum = 0.0  # int (mass + |v|^2 f) dt, for the L1 drag bound
        self.grad_sq_series = [self.solver.grad_sq(u0)]
        self.records = [] if record_particles else None
        self._a1_opnorm_sq = 0.0
        self._record_step_drift()

    # -- helpers

    def _track_a1_norm(self, t):
        if self.solver.A1 is None:
            return
        pts = np.array([[0.1, 0.2], [0.6, 0.7], [0.33, 0.85], [0.9, 0.4]])
        A = sample_coefficient(self.solver.A1, t, pts, self.state.eps)
        op = np.linalg.norm(A, ord=2, axis=(-2, -1)).max()
        self._a1_opnorm_sq = max(self._a1_opnorm_sq, float(op) ** 2)

    def step(self):
        dt = self.grid.dt
        self._track_a1_norm(self.state.t)
        self.state, diag = step_coupled(self.state, dt, self.solver)
        self.time_moment_cum += dt * (diag.mass + diag.second_moment)
        self.drag_dissipation_cum += diag.drag_dissipation
        self.weighted_drag_cum += diag.weighted_drag_dissipation
        self.viscous_dissipation_cum += dt * self.solver.grad_sq(self.state.fluid.u)
        self.drag_l1_cum += diag.drag_l1
        self.grad_sq_series.append(self.solver.grad_sq(self.state.fluid.u))
        self._record_step_drift()
        return diag

    def _record_step_drift(self):
        if self.records is None:
            return
        ens = self.state.particles
        if ens.count:
            fld = mollify_field(self.state.fluid.u, self.state.params) \
                if self.state.params.active else self.state.fluid.u
            ux, uy = interpolate_velocity(fld, ens.x[:, 0], ens.x[:, 1])
            drift = np.stack([ux, uy], axis=1)
        else:
            drift = np.zeros((0, 2))
        self.records.append(dict(t=self.state.t, x=ens.x.copy(), v=ens.v.copy(),
                                 w=ens.w.copy(), drift=drift))

    def run(self, n_steps=None):
        n = self.grid.n_steps if n_steps is None else n_steps
        for _ in range(n):
            self.step()
        return self.state

    # -- ledgers

    def energy_ledger(self) -> EnergyReport:
        m = moments(self.state.particles)
        return EnergyReport(
            fluid_ke=self.state.fluid.u.l2() ** 2,
            particle_ke=m.kinetic_energy,
            mass=m.mass,
            second_moment=m.second_moment,
            drag_dissipation_cum=self.drag_dissipation_cum,
            viscous_dissipation_cum=self.viscous_dissipation_cum,
            drag_l1_cum=self.drag_l1_cum,
        ).validate()

    def memory_credit(self):
        """Young-inequality budget of the memory stress in the energy estimate.

        (c1 / alpha) * t * int_0^t int_0^tau |grad u(s)|^2 ds dtau with
        c1 the squared operator norm of the sampled memory viscosity;
        identically zero without memory.
        """
        if self.solver.A1 is None or self._a1_opnorm_sq == 0.0:
            return 0.0
        dt = self.grid.dt
        inner = np.cumsum(np.asarray(self.grad_sq_series) * dt)
        t = self.state.t
        credit = (self._a1_opnorm_sq / self.solver.A0.alpha) * t * float(
            np.sum(inner[1:] * dt))
        return credit

    def drag_l1_bound(self):
        """Right side of the L1 drag estimate: sqrt(2) sqrt(moment) sqrt(weighted)."""
        return float(np.sqrt(2.0) * np.sqrt(self.time_moment_cum)
                     * np.sqrt(self.weighted_drag_cum))


# ----------------------------------------------------------------------
# weak-form residual of the kinetic equation
# ----------------------------------------------------------------------


@dataclass
class PhaseTestFunction:
    """C^1 test function phi(t, x, v) with analytic derivatives.

    Must vanish at t = T, have compact support in v, and be specular
    compatible: phi(t, x, v) = phi(t, x, v*) on the walls.
    """

    value: Callable
    d_t: Callable
    grad_x: Callable
    grad_v: Callable
    T: float


def radial_test_function(T, vmax_support=3.0) -> PhaseTestFunction:
    """phi = (1 - t/T)^2 h(x) q(|v|^2): compatible at every wall by radiality."""
    R2 = vmax_support**2

    def g(t):
        return (1.0 - t / T) ** 2

    def dg(t):
        return -2.0 * (1.0 - t / T) / T

    def h(x):
        return 1.0 + 0.5 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])

    def hx(x):
        out = np.zeros_like(x)
        out[:, 0] = 0.5 * np.pi * np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])
        out[:, 1] = 0.5 * np.pi * np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])
        return out

    def q(s):
        return np.clip(1.0 - s / R2, 0.0, None) ** 3

    def dq(s):
        return -3.0 * np.clip(1.0 - s / R2, 0.0, None) ** 2 / R2

    def value(t, x, v):
        return g(t) * h(x) * q(np.sum(v**2, axis=1))

    def d_t(t, x, v):
        return dg(t) * h(x) * q(np.sum(v**2, axis=1))

    def grad_x(t, x, v):
        return g(t) * q(np.sum(v**2, axis=1))[:, None] * hx(x)

    def grad_v(t, x, v):
        s = np.sum(v**2, axis=1)
        return (g(t) * h(x) * dq(s))[:, None] * (2.0 * v)

    return PhaseTestFunction(value, d_t, grad_x, grad_v, T)


def _check_specular_compatible(phi: PhaseTestFunction, grid: GridSpec, tol=1e-10):
    rng = np.random.default_rng(12345)
    t = 0.3 * phi.T
    walls = [(np.array([[0.0, 0.4], [grid.Lx, 0.7]]), 0),
             (np.array([[0.3, 0.0], [0.6, grid.Ly]]), 1)]
    for xs, axis in walls:
        vs = rng.normal(size=(xs.shape[0], 2))
        vr = vs.copy()
        vr[:, axis] = -vr[:, axis]
        gap = np.abs(phi.value(t, xs, vs) - phi.value(t, xs, vr)).max()
        if gap > tol:
            raise ValueError("test function is not specular compatible (gap %.2e)" % gap)


def weak_form_residual(records, eps, dt, phi: PhaseTestFunction, grid: GridSpec):
    """Particle-quadrature residual of the kinetic weak formulation.

    records: per time node dicts with keys t, x, v, w, drift (the drift the
    particles felt); the final record is at t = T where phi vanishes.
    """
    if abs(phi.value(phi.T, np.array([[0.5, 0.5]]), np.zeros((1, 2)))[0]) > 1e-14:
        raise ValueError("test function must vanish at the final time")
    _check_specular_compatible(phi, grid)
    total = 0.0
    for rec in records[:-1]:
        t, x, v, w, U = rec["t"], rec["x"], rec["v"], rec["w"], rec["drift"]
        if w.size == 0:
            continue
        term = (phi.d_t(t, x, v)
                + eps * np.sum(v * phi.grad_x(t, x, v), axis=1)
                + np.sum((U - v) * phi.grad_v(t, x, v), axis=1))
        total += dt * float(np.sum(w * term))
    first = records[0]
    if first["w"].size:
        total += float(np.sum(first["w"] * phi.value(0.0, first["x"], first["v"])))
    return abs(total)
