"""Time-dependent incompressible Stokes flow with viscous memory.

One step solves the monolithic generalized-Stokes system

    (I - dt div(A0 grad)) u^{n+1} + dt grad p^{n+1} = u^n + dt (div M^n + F)
    div u^{n+1} = 0,  u^{n+1} = 0 on the walls,  mean p^{n+1} = 0

where M^n is the trapezoidal quadrature of the time convolution
A1 * grad u over the stored history (explicit, lagged one step).  The
coupled solve makes the discrete energy identity exact: testing with
u^{n+1} gives |u^{n+1}|^2 + 2 dt a(u^{n+1}, u^{n+1}) <= |u^n|^2 + source
terms, the per-step shadow of the continuous dissipation estimate.

The solution map S takes a velocity trajectory w, pushes the regularized
ensemble along the mollified drift, assembles the truncated drag and the
memory of grad w, and returns the resulting Stokes trajectory; Picard
iteration of S is the computable surrogate for the fixed-point existence
argument and its convergence is reported, not assumed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .coefficients import OscillatoryCoefficient, sample_coefficient
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
from .operators import (
    Layout,
    SaddleSolver,
    SolverFailure,
    VelocityForm,
    matrix_viscosity_terms,
    sample_matrix_coefficient,
)
from .particles import (
    InitialData,
    ParticleEnsemble,
    RegularizationParams,
    init_from_density,
    push_with_drift,
    regularize_initial,
    relaxation_factors,
)


@dataclass
class StokesState:
    """Velocity, zero-mean pressure and clock of the fluid."""

    u: VectorField
    p: ScalarField
    t: float = 0.0

    def copy(self):
        return StokesState(self.u.copy(), self.p.copy(), self.t)


class MemoryHistory:
    """Stored velocity-gradient snapshots feeding the time convolution.

    Seeded with the initial gradient; append-only, one snapshot per
    completed step so snapshot m lives at time m * dt.
    """

    def __init__(self, grid: GridSpec, dt: float, initial: TensorField = None):
        self.grid = grid
        self.dt = dt
        self.snapshots: list[np.ndarray] = []
        if initial is not None:
            self.append(initial)

    def __len__(self):
        return len(self.snapshots)

    @property
    def t_end(self):
        return (len(self.snapshots) - 1) * self.dt

    def append(self, tensor: TensorField):
        assert tensor.grid.nx == self.grid.nx and tensor.grid.ny == self.grid.ny
        self.snapshots.append(tensor.data.copy())


def _trapezoid_weights(n):
    """Weights of the composite trapezoid rule on 0..n (empty for n = 0)."""
    if n == 0:
        return np.zeros(1)
    w = np.ones(n + 1)
    w[0] = 0.5
    w[-1] = 0.5
    return w


def memory_convolution(hist: MemoryHistory, A1: OscillatoryCoefficient, t, eps) -> TensorField:
    """(A1^eps * grad u)(t) by trapezoidal quadrature over the history.

    Requires t to be the time of the last stored snapshot.  The stress is
    grad u contracted with the sampled matrix from the right, matching the
    componentwise viscous form.
    """
    grid = hist.grid
    n = len(hist.snapshots) - 1
    if n < 0 or abs(t - n * hist.dt) > 1e-12 * max(1.0, abs(t)):
        raise ValueError("history does not cover the requested time")
    out = np.zeros((grid.nx, grid.ny, 2, 2))
    if n == 0:
        return TensorField(grid, out)
    xc, yc = grid.cell_centers()
    Xc, Yc = np.meshgrid(xc, yc, indexing="ij")
    centers = np.stack([Xc, Yc], axis=-1)
    w = _trapezoid_weights(n)
    for m in range(n + 1):
        if w[m] == 0.0:
            continue
        A = sample_coefficient(A1, t - m * hist.dt, centers, eps)
        out += w[m] * hist.dt * np.einsum("xyim,xymj->xyij", hist.snapshots[m], A)
    return TensorField(grid, out)


def tensor_force(layout: Layout, M: TensorField) -> np.ndarray:
    """Integrated weak divergence of a cell stress: f . w = -<M, grad w>."""
    Mflat = M.data.reshape(layout.n_cells, 2, 2)
    f = np.zeros(layout.n_vel)
    offs = {0: 0, 1: layout.n_u}
    for i in (0, 1):
        for j in (0, 1):
            Eij = layout.extract(i, j, "c")
            f[offs[i]: offs[i] + Eij.shape[1]] -= Eij.T @ (layout.w_cells * Mflat[:, i, j])
    return f


class NonlocalStokesSolver:
    """Cached assembly and factorization for repeated implicit steps."""

    def __init__(self, grid: GridSpec, A0: OscillatoryCoefficient,
                 A1: OscillatoryCoefficient = None, eps=1.0, dt=None):
        self.grid = grid
        self.A0 = A0
        self.A1 = A1
        self.eps = eps
        self.dt = grid.dt if dt is None else dt
        self.layout = Layout(grid, "dirichlet")
        self._saddle = None
        self._saddle_time = None
        self._identity_form = None
        self._form = None

    def _build(self, t):
        Ac, An = sample_matrix_coefficient(self.layout, self.A0, t, eps=self.eps)
        self._form = VelocityForm(self.layout, matrix_viscosity_terms(self.layout, Ac, An))
        self._saddle = SaddleSolver(self.layout, self._form.K, self.dt,
                                    mass_scale=self.grid.cell_area)
        self._saddle_time = t

    def saddle_at(self, t):
        if self._saddle is None or (self.A0.time_varying and t != self._saddle_time):
            self._build(t)
        return self._saddle

    @property
    def identity_form(self):
        """Viscous form with unit coefficient, used for gradient norms."""
        if self._identity_form is None:
            nI_c = np.tile(np.eye(2), (self.layout.n_cells, 1, 1))
            nI_n = np.tile(np.eye(2), (self.layout.n_nodes, 1, 1))
            self._identity_form = VelocityForm(
                self.layout, matrix_viscosity_terms(self.layout, nI_c, nI_n))
        return self._identity_form

    def grad_sq(self, u: VectorField) -> float:
        """Discrete |grad u|^2 integral from the assembly quadrature."""
        dofs = self.layout.from_vector_field(u)
        return self.identity_form.quadratic(dofs)

    def viscous_quadratic(self, u: VectorField, t) -> float:
        self.saddle_at(t)
        dofs = self.layout.from_vector_field(u)
        return self._form.quadratic(dofs)

    def step(self, state: StokesState, hist: MemoryHistory = None,
             F: VectorField = None, append_gradient=True, check_div=True) -> StokesState:
        """One implicit step; appends the new gradient snapshot to hist.

        With append_gradient=False the history is read but left untouched
        (used by the solution map S, whose memory is built from the input
        trajectory rather than from the output).
        """
        lay = self.layout
        g = self.grid
        area = g.cell_area
        rhs = area * lay.from_vector_field(state.u)
        if F is not None:
            rhs += self.dt * area * lay.from_vector_field(F)
        if hist is not None and self.A1 is not None:
            M = memory_convolution(hist, self.A1, state.t, self.eps)
            rhs += self.dt * tensor_force(lay, M)
        saddle = self.saddle_at(state.t + self.dt)
        vel, p = saddle.solve(rhs)
        u_new = lay.to_vector_field(vel)
        new = StokesState(u_new, ScalarField(g, p.reshape(g.nx, g.ny)), state.t + self.dt)
        if check_div:
            dmax = float(np.abs(divergence(u_new).data).max())
            if dmax > 1e-8:
                raise SolverFailure("divergence audit failed: %.3e" % dmax, residual=dmax)
        if hist is not None and append_gradient:
            hist.append(velocity_gradient(u_new))
        return new


def stokes_step(state: StokesState, A0, A1, hist, F, eps, dt) -> StokesState:
    """Single uncached step (see NonlocalStokesSolver.step for the scheme)."""
    solver = NonlocalStokesSolver(state.u.grid, A0, A1, eps=eps, dt=dt)
    return solver.step(state, hist=hist, F=F)


# ----------------------------------------------------------------------
# trajectories and the solution map S
# ----------------------------------------------------------------------


class Trajectory:
    """Velocity snapshots on the uniform time grid t_n = n dt."""

    def __init__(self, grid: GridSpec, dt: float, fields=None):
        self.grid = grid
        self.dt = dt
        self.fields: list[VectorField] = fields if fields is not None else []

    def __len__(self):
        return len(self.fields)

    def append(self, vec: VectorField):
        self.fields.append(vec)

    @staticmethod
    def zero(grid: GridSpec, dt: float, n_steps: int):
        return Trajectory(grid, dt, [VectorField(grid) for _ in range(n_steps + 1)])

    def l2q(self):
        """L2(Q) norm by left-endpoint time quadrature."""
        return float(np.sqrt(sum(self.dt * f.l2() ** 2 for f in self.fields[:-1])))

    def l2q_diff(self, other: "Trajectory"):
        total = 0.0
        for a, b in zip(self.fields[:-1], other.fields[:-1]):
            total += self.dt * ((np.sum((a.u - b.u) ** 2) + np.sum((a.v - b.v) ** 2))
                                * self.grid.cell_area)
        return float(np.sqrt(total))

    def l2v(self, solver: NonlocalStokesSolver):
        """Discrete L2(0,T;V) norm: time-integrated gradient seminorm."""
        return float(np.sqrt(sum(self.dt * solver.grad_sq(f) for f in self.fields[:-1])))


def mollify_field(vec: VectorField, params: RegularizationParams) -> VectorField:
    """Componentwise convolution with the spatial mollifier, zero-extended."""
    if not params.active:
        return vec
    g = vec.grid
    n = max(1, int(np.ceil(params.lam / min(g.dx, g.dy))))
    off = np.arange(-n, n + 1)
    kx = params.mollifier_1d(off * g.dx)
    ky = params.mollifier_1d(off * g.dy)
    if kx.sum() == 0 or ky.sum() == 0:  # radius below grid resolution
        return vec.copy()
    kern = np.outer(kx, ky)
    kern /= kern.sum()
    out = vec.copy()
    out.u = scipy.ndimage.convolve(vec.u, kern, mode="constant", cval=0.0)
    out.v = scipy.ndimage.convolve(vec.v, kern, mode="constant", cval=0.0)
    return out


def build_regularized_ensemble(data: InitialData, params: RegularizationParams,
                               grid: GridSpec, lattice) -> ParticleEnsemble:
    """Lattice ensemble of the (optionally mollified and truncated) f0."""
    if params.active:
        ev = regularize_initial(data, params, grid)
        f0 = lambda x, y, vx, vy: ev(x, y, vx, vy)
    else:
        f0 = data.f0
    return init_from_density(f0, lattice, data.vmax, grid)


def drag_impulse_payload(w_k, gamma_k, drift, v_old, dt):
    """Per-particle drag transferred to the fluid over one relaxation step.

    Equals minus the particle momentum change per unit time, so the
    fluid/particle momentum bookkeeping closes exactly away from walls.
    """
    _, pw = relaxation_factors(dt)
    scale = (gamma_k * w_k) * (pw / dt)
    return -scale[:, None] * (drift - v_old)


def apply_operator_S(w: Trajectory, ens0: ParticleEnsemble, solver: NonlocalStokesSolver,
                     u0: VectorField, params: RegularizationParams) -> Trajectory:
    """The solution map: drive the kinetic phase and the Stokes solve by w.

    Returns the velocity trajectory obtained by (1) pushing the ensemble
    along the mollified drift w * theta, (2) depositing the truncated drag
    and the memory stress built from grad w, (3) stepping the implicit
    Stokes solver.  Deterministic in w.
    """
    grid = solver.grid
    dt = solver.dt
    n_steps = len(w) - 1
    ens = ens0.copy()
    out = Trajectory(grid, dt, [u0.copy()])
    state = StokesState(u0.copy(), ScalarField(grid), 0.0)
    hist_w = MemoryHistory(grid, dt, velocity_gradient(w.fields[0])) if solver.A1 is not None else None
    for n in range(n_steps):
        wn = mollify_field(w.fields[n], params)
        if ens.count:
            wx, wy = interpolate_velocity(wn, ens.x[:, 0], ens.x[:, 1])
            drift = np.stack([wx, wy], axis=1)
            gamma = params.gamma(ens.v)
            payload = drag_impulse_payload(ens.w, gamma, drift, ens.v, dt)
            ens = push_with_drift(ens, drift, solver.eps, dt, grid)
            F = deposit_vector(grid, ens.x[:, 0], ens.x[:, 1], payload[:, 0], payload[:, 1])
        else:
            F = None
        state = solver.step(state, hist=hist_w, F=F, append_gradient=False)
        if hist_w is not None:
            hist_w.append(velocity_gradient(w.fields[n + 1]))
        out.append(state.u.copy())
    return out


@dataclass
class FixedPointResult:
    trajectory: Trajectory
    residuals: list
    energies: list
    converged: bool

    @property
    def iterations(self):
        return len(self.residuals)


def fixed_point_solve(data: InitialData, params: RegularizationParams,
                      A0: OscillatoryCoefficient, A1, grid: GridSpec, eps,
                      lattice=(8, 8, 8, 8), tol=1e-8, max_iter=30,
                      log_path=None) -> FixedPointResult:
    """Picard iteration w <- S(w) from w = 0.

    Convergence of the iteration is an empirical property of the data (the
    existence argument is non-constructive), so non-convergence within
    max_iter is reported through the result rather than raised.  With
    log_path set, a CSV iteration log (iter, residual, energy) is written.
    """
    solver = NonlocalStokesSolver(grid, A0, A1, eps=eps, dt=grid.dt)
    ens0 = build_regularized_ensemble(data, params, grid, lattice)
    n_steps = grid.n_steps
    w = Trajectory.zero(grid, grid.dt, n_steps)
    residuals, energies = [], []
    converged = False
    for _ in range(max_iter):
        w_next = apply_operator_S(w, ens0, solver, data.u0, params)
        res = w_next.l2q_diff(w)
        residuals.append(res)
        energies.append(w_next.l2q() ** 2)
        w = w_next
        if res <= tol:
            converged = True
            break
    if log_path is not None:
        from .io import write_timeseries

        rows = [[k + 1, r, e] for k, (r, e) in enumerate(zip(residuals, energies))]
        write_timeseries(log_path, ["iter", "residual", "energy"], rows)
    return FixedPointResult(w, residuals, energies, converged)


# ----------------------------------------------------------------------
# modal reduction for the memory quadrature (oracle hook)
# ----------------------------------------------------------------------


def shear_memory_trajectory(a0, kernel: OscillatoryCoefficient, mu, c0, dt, n_steps):
    """Scalar shadow of the implicit memory scheme on one diffusion eigenmode.

    Runs c^{n+1} (1 + dt a0 mu) = c^n - dt mu m^n where m^n is produced by
    the production memory_convolution quadrature applied to the history of
    c (gradients c_m xi with xi = e1 (x) e1).  The continuous counterpart
    is the scalar Volterra equation c' = -mu (a0 c + int k(t-s) c(s) ds).
    """
    grid = GridSpec(nx=4, ny=4, dt=dt, T=max(dt, n_steps * dt))
    xi = np.zeros((4, 4, 2, 2))
    xi[:, :, 0, 0] = 1.0
    hist = MemoryHistory(grid, dt, TensorField(grid, c0 * xi))
    c = [float(c0)]
    for n in range(n_steps):
        M = memory_convolution(hist, kernel, n * dt, eps=1.0)
        m = float(M.data[0, 0, 0, 0])
        c_new = (c[-1] - dt * mu * m) / (1.0 + dt * a0 * mu)
        c.append(c_new)
        hist.append(TensorField(grid, c_new * xi))
    return np.array(c)
