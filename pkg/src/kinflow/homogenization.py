"""Periodic cell problem and effective viscosity tensors.

For each constant matrix xi the corrector (chi_xi, p_xi) solves the
periodic Stokes cell problem

    -div_y(A0 (xi + grad_y chi)) + grad_y p = 0,   div_y chi = 0

with zero cell means.  The instantaneous effective tensor contracts the
cell-averaged stress of xi + grad chi_xi against constant test gradients,

    <C0 xi, eta> = avg_Y A0 (xi + grad chi_xi) : eta,

which by the discrete weak form equals the full energy pairing and is
therefore symmetric and coercive with the coefficient's constant alpha.
The memory tensor C1(t) averages A1(t, y) against the same corrector
(decoupled mode); the time-coupled reading is available as the impulse
response of the memory-carrying cell problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import OscillatoryCoefficient
from .fields import GridSpec
from .operators import (
    Layout,
    SaddleSolver,
    VelocityForm,
    matrix_viscosity_terms,
    sample_matrix_coefficient,
)

BASIS_MATRICES = [np.outer(np.eye(2)[i], np.eye(2)[j]) for i in (0, 1) for j in (0, 1)]


@dataclass
class CellProblemSpec:
    """Unit-cell coefficient samplers and resolution."""

    A0_cell: OscillatoryCoefficient
    ny_cell: int = 64
    A1_cell: Optional[OscillatoryCoefficient] = None
    alpha: float = None

    def __post_init__(self):
        if self.ny_cell < 8:
            raise ValueError("cell grid too coarse")
        if self.alpha is None:
            self.alpha = self.A0_cell.alpha

    def grid(self):
        return GridSpec(nx=self.ny_cell, ny=self.ny_cell, dt=1.0, T=1.0)


class CellAssembly:
    """Cached periodic layout, forms and factorization for one coefficient."""

    def __init__(self, spec: CellProblemSpec):
        from .coefficients import audit_coercivity, audit_periodicity

        if audit_periodicity(spec.A0_cell, n=100) > 1e-10:
            raise ValueError("cell coefficient is not 1-periodic")
        if audit_coercivity(spec.A0_cell, n=200) < -1e-12:
            raise ValueError("cell coefficient fails its coercivity constant")
        self.spec = spec
        self.grid = spec.grid()
        self.layout = Layout(self.grid, "periodic")
        Ac, An = sample_matrix_coefficient(self.layout, spec.A0_cell, t=0.0, eps=None)
        self.form0 = VelocityForm(self.layout, matrix_viscosity_terms(self.layout, Ac, An))
        self.saddle = SaddleSolver(self.layout, self.form0.K, dt=1.0, mass_scale=0.0,
                                   pin_velocity_means=True)
        self._a1_forms = {}

    def a1_form(self, t) -> VelocityForm:
        """Form for the memory coefficient at lag t; stiffness built lazily."""
        key = round(float(t), 12)
        if key not in self._a1_forms:
            Ac, An = sample_matrix_coefficient(self.layout, self.spec.A1_cell, t=t, eps=None)
            self._a1_forms[key] = VelocityForm(
                self.layout, matrix_viscosity_terms(self.layout, Ac, An), assemble=False)
        return self._a1_forms[key]

    def solve(self, xi, form: VelocityForm = None, saddle: SaddleSolver = None,
              extra_load=None):
        """Solve the cell problem for the affine part xi (plus optional load)."""
        form = form or self.form0
        saddle = saddle or self.saddle
        rhs = -form.affine_load(np.asarray(xi, dtype=float))
        if extra_load is not None:
            rhs = rhs - extra_load
        vel, p = saddle.solve(rhs)
        return vel, p


@dataclass
class Corrector:
    """Per-basis cell solutions chi_xi with zero cell mean, divergence free."""

    assembly: CellAssembly
    velocities: dict = field(default_factory=dict)  # basis index -> dof vector
    pressures: dict = field(default_factory=dict)

    def chi(self, xi):
        """Corrector dof vector for an arbitrary matrix by superposition."""
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(self.assembly.layout.n_vel)
        for idx, basis in enumerate(BASIS_MATRICES):
            i, j = divmod(idx, 2)
            out += xi[i, j] * self.velocities[idx]
        return out

    def chi_grids(self, idx):
        """(chi_x, chi_y) arrays on the periodic cell for one basis matrix."""
        lay = self.assembly.layout
        u, v = lay.split(self.velocities[idx])
        return u.reshape(lay.u_shape), v.reshape(lay.v_shape)

    def audits(self):
        """(max divergence, max velocity mean, max pressure mean) over bases."""
        lay = self.assembly.layout
        dmax = umax = pmax = 0.0
        for idx in self.velocities:
            vel = self.velocities[idx]
            dmax = max(dmax, float(np.abs(lay.D @ vel).max()))
            u, v = lay.split(vel)
            umax = max(umax, abs(float(u.mean())), abs(float(v.mean())))
            pmax = max(pmax, abs(float(self.pressures[idx].mean())))
        return dmax, umax, pmax


def solve_cell_problem(spec: CellProblemSpec, xi, assembly: CellAssembly = None):
    """Corrector pair for one matrix xi; see Corrector for the basis set."""
    assembly = assembly or CellAssembly(spec)
    vel, p = assembly.solve(xi)
    lay = assembly.layout
    u, v = lay.split(vel)
    return (u.reshape(lay.u_shape), v.reshape(lay.v_shape)), p.reshape(lay.u_shape)


def solve_basis_correctors(spec: CellProblemSpec, assembly: CellAssembly = None) -> Corrector:
    assembly = assembly or CellAssembly(spec)
    corr = Corrector(assembly)
    for idx, basis in enumerate(BASIS_MATRICES):
        vel, p = assembly.solve(basis)
        corr.velocities[idx] = vel
        corr.pressures[idx] = p
    return corr


@dataclass
class EffectiveTensors:
    """Homogenized instantaneous viscosity and memory-kernel sequence."""

    C0: np.ndarray                      # (2, 2, 2, 2)
    C1_times: np.ndarray = None         # (n_t,)
    C1_seq: np.ndarray = None           # (n_t, 2, 2, 2, 2)

    def apply_C0(self, xi):
        return np.einsum("ijkl,kl->ij", self.C0, np.asarray(xi, dtype=float))

    def quadratic(self, xi):
        return float(np.einsum("ij,ijkl,kl->", xi, self.C0, xi))

    def asymmetry(self):
        """Max defect of <C0 xi, eta> = <C0 eta, xi> over the basis."""
        return float(np.abs(self.C0 - np.transpose(self.C0, (2, 3, 0, 1))).max())


def effective_C0(spec: CellProblemSpec, correctors: Corrector) -> np.ndarray:
    """Cell-averaged stress of the corrected basis gradients."""
    C0 = np.zeros((2, 2, 2, 2))
    form = correctors.assembly.form0
    for idx, basis in enumerate(BASIS_MATRICES):
        k, l = divmod(idx, 2)
        C0[:, :, k, l] = form.average_stress(correctors.velocities[idx], basis)
    return C0


def effective_C1(spec: CellProblemSpec, correctors: Corrector, times) -> EffectiveTensors:
    """Decoupled-mode memory tensors: avg A1(t, y)(xi + grad chi_xi) per time node."""
    if spec.A1_cell is None:
        raise ValueError("cell spec has no memory coefficient")
    times = np.asarray(times, dtype=float)
    seq = np.zeros((times.size, 2, 2, 2, 2))
    for n, t in enumerate(times):
        form1 = correctors.assembly.a1_form(t)
        for idx, basis in enumerate(BASIS_MATRICES):
            k, l = divmod(idx, 2)
            seq[n, :, :, k, l] = form1.average_stress(correctors.velocities[idx], basis)
    C0 = effective_C0(spec, correctors)
    return EffectiveTensors(C0=C0, C1_times=times, C1_seq=seq)


def voigt_upper_bound(assembly: CellAssembly, xi) -> float:
    """Energy of the uncorrected affine field: the chi = 0 competitor."""
    xi = np.asarray(xi, dtype=float)
    lay = assembly.layout
    area = lay.grid.Lx * lay.grid.Ly
    total = 0.0
    for t in assembly.form0.terms:
        total += float(np.sum(lay.weights(t.loc) * t.coeff)) * xi[t.i, t.j] * xi[t.k, t.l]
    return total / area


# ----------------------------------------------------------------------
# time-coupled cell problem: impulse response of the memory kernel
# ----------------------------------------------------------------------


@dataclass
class ImpulseResponse:
    times: np.ndarray
    stresses: np.ndarray   # (n_t + 1, 2, 2): sigma^n for the impulse input
    kernel: np.ndarray     # (n_t, 2, 2): sigma^n / (dt/2) for n >= 1

    def stress0(self):
        return self.stresses[0]


def volterra_impulse_response(spec: CellProblemSpec, xi, dt, n_steps) -> ImpulseResponse:
    """Drive the memory-coupled cell problem with a one-step gradient impulse.

    The macroscopic-time convolution inside the cell problem is taken as a
    trapezoidal sum; the current-time endpoint (kernel lag zero) is folded
    into the operator.  Input sequence xi_0 = xi, xi_n = 0 afterwards; the
    effective-stress sequence divided by the impulse quadrature weight
    dt/2 is the extracted memory kernel.
    """
    if spec.A1_cell is None:
        raise ValueError("cell spec has no memory coefficient")
    assembly = CellAssembly(spec)
    lay = assembly.layout
    xi = np.asarray(xi, dtype=float)
    zero = np.zeros((2, 2))

    # step 0: no memory yet
    vel0, _ = assembly.solve(xi)
    chis = [vel0]
    xis = [xi]
    sigma = [assembly.form0.average_stress(vel0, xi)]

    K1_0 = assembly.a1_form(0.0)
    K_impl = (assembly.form0.K + 0.5 * dt * K1_0.K).tocsr()
    saddle_impl = SaddleSolver(lay, K_impl, dt=1.0, mass_scale=0.0, pin_velocity_means=True)

    for n in range(1, n_steps + 1):
        w = np.ones(n + 1)
        w[0] = 0.5
        w[-1] = 0.5
        load = np.zeros(lay.n_vel)
        for m in range(n):
            form1 = assembly.a1_form((n - m) * dt)
            load += w[m] * dt * (form1.K @ chis[m] + form1.affine_load(xis[m]))
        vel, _ = assembly.solve(zero, form=assembly.form0, saddle=saddle_impl,
                                extra_load=load)
        chis.append(vel)
        xis.append(zero)
        s = assembly.form0.average_stress(vel, zero)
        for m in range(n + 1):
            form1 = assembly.a1_form((n - m) * dt)
            s = s + w[m] * dt * form1.average_stress(chis[m], xis[m])
        sigma.append(s)

    sigma = np.array(sigma)
    times = np.arange(n_steps + 1) * dt
    kernel = sigma[1:] / (0.5 * dt)
    return ImpulseResponse(times=times, stresses=sigma, kernel=kernel)
