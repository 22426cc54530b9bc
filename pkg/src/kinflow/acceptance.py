"""Acceptance criteria: property- and oracle-based checks at desk scale.

Each criterion is a callable returning a CriterionResult; the CLI `check`
subcommand and the pytest acceptance module both drive this list.  Every
tolerance is fixed here, not configurable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .config import RunConfig
from .coupled import CoupledRunner, radial_test_function, weak_form_residual
from .coefficients import (
    OscillatoryCoefficient,
    builtin_coefficient,
    checkerboard_coefficient,
    constant_coefficient,
    sinusoidal_coefficient,
)
from .fields import GridSpec, cavity_stream_field
from .homogenization import (
    CellProblemSpec,
    EffectiveTensors,
    effective_C0,
    solve_basis_correctors,
    voigt_upper_bound,
)
from .particles import (
    InitialData,
    ParticleEnsemble,
    RegularizationParams,
    init_from_density,
    moments,
    phase_volume,
    push_step_jacobian,
    push_with_drift,
    specular_reflect,
    thin,
    velocity_subvolume,
)
from .runs import run_convergence_study
from .scenarios import gaussian_ball_density
from .stokes import fixed_point_solve, shear_memory_trajectory


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    runtime: float
    budget: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return "[%s] %-28s %6.1fs (budget %4.0fs)  %s" % (
            status, self.name, self.runtime, self.budget, self.detail)


def _result(name, budget, t0, passed, detail):
    runtime = time.time() - t0
    return CriterionResult(name, bool(passed) and runtime <= budget, detail, runtime, budget)


# -- 1 ------------------------------------------------------------------


def criterion_phase_volume():
    """Tracked-simplex contraction matches the analytic Jacobian power."""
    t0 = time.time()
    grid = GridSpec(nx=16, ny=16, dt=1e-3, T=1.0)
    eps, dt, n = 1.0, 1e-3, 1000
    base = np.array([0.5, 0.5, 0.0, 0.0])
    offsets = np.vstack([np.zeros(4), np.eye(4)[[2, 3, 0, 1]]])  # v-offsets first
    pts = base + 0.02 * offsets
    ens = ParticleEnsemble(pts[:, :2], pts[:, 2:], np.ones(5))
    v0 = phase_volume(ens.phase_points(range(5)))
    a0 = velocity_subvolume(ens.phase_points(range(5)))
    drift = np.tile(np.array([0.03, -0.01]), (5, 1))
    for _ in range(n):
        ens = push_with_drift(ens, drift, eps, dt, grid)
    ratio = phase_volume(ens.phase_points(range(5))) / v0
    vratio = velocity_subvolume(ens.phase_points(range(5))) / a0
    oracle = float(np.linalg.det(push_step_jacobian(eps, dt))) ** n
    gap = abs(ratio - oracle) / oracle
    vgap = abs(vratio - np.exp(-2.0 * n * dt)) / np.exp(-2.0 * n * dt)
    ok = gap <= 1e-9 and vgap <= 1e-12
    return _result("phase-volume-law", 1.0, t0, ok,
                   "jacobian gap %.2e, velocity factor gap %.2e" % (gap, vgap))


# -- 2 ------------------------------------------------------------------


def _lattice_64_thinned(grid, vmax, target):
    """64^4 midpoint lattice of the cloud density, thinned by weight."""
    f0 = gaussian_ball_density()
    n = 64
    xs = (np.arange(n) + 0.5) * grid.Lx / n
    ys = (np.arange(n) + 0.5) * grid.Ly / n
    vxs = -vmax + (np.arange(n) + 0.5) * 2.0 * vmax / n
    vys = -vmax + (np.arange(n) + 0.5) * 2.0 * vmax / n
    cell = (grid.Lx / n) * (grid.Ly / n) * (2.0 * vmax / n) ** 2
    chunks = []
    for i, vx in enumerate(vxs):  # slab over one velocity axis to bound memory
        X, Y, VY = np.meshgrid(xs, ys, vys, indexing="ij")
        W = f0(X, Y, np.full_like(X, vx), VY) * cell
        keep = W > 0
        if not np.any(keep):
            continue
        pos = np.stack([X[keep], Y[keep]], axis=1)
        vel = np.stack([np.full(keep.sum(), vx), VY[keep]], axis=1)
        chunks.append((pos, vel, W[keep]))
    x = np.concatenate([c[0] for c in chunks])
    v = np.concatenate([c[1] for c in chunks])
    w = np.concatenate([c[2] for c in chunks])
    return thin(ParticleEnsemble(x, v, w), target)


def criterion_mass_positivity():
    """Mass drift and weight positivity over a long coupled run."""
    t0 = time.time()
    grid = GridSpec(nx=64, ny=64, dt=2.5e-3, T=5.0, eps=0.125)
    ens = _lattice_64_thinned(grid, vmax=2.0, target=800_000)
    u0 = cavity_stream_field(grid, 0.3)
    runner = CoupledRunner(grid, sinusoidal_coefficient(), None, ens, u0, 0.125)
    m0 = moments(runner.state.particles).mass
    min_w = np.inf
    for _ in range(2000):
        runner.step()
        min_w = min(min_w, float(runner.state.particles.w.min()))
    drift = abs(moments(runner.state.particles).mass - m0) / m0
    ok = drift <= 1e-13 and min_w >= 0.0
    return _result("mass-positivity", 300.0, t0, ok,
                   "%d particles, mass drift %.2e, min weight %.2e"
                   % (ens.count, drift, min_w))


# -- 3 ------------------------------------------------------------------


def criterion_specular_reflection():
    """Speed preserved and double reflection the identity on velocities.

    Velocity equalities are bitwise (only one component is negated); the
    mirrored position returns to within one rounding of the wall plane.
    """
    t0 = time.time()
    rng = np.random.default_rng(42)
    bad = 0
    for wall in ("left", "right", "bottom", "top"):
        x = rng.uniform(0.0, 1.0, (25_000, 2))
        v = rng.normal(0.0, 3.0, (25_000, 2))
        x1, v1 = specular_reflect(x, v, wall)
        bad += int(np.sum(np.hypot(v1[:, 0], v1[:, 1]) != np.hypot(v[:, 0], v[:, 1])))
        x2, v2 = specular_reflect(x1, v1, wall)
        bad += int(np.sum(np.any(v2 != v, axis=1)))
        bad += int(np.sum(np.abs(x2 - x).max(axis=1) > 4.0 * np.finfo(float).eps))
    return _result("specular-reflection", 1.0, t0, bad == 0,
                   "%d violations in 10^5 cases" % bad)


# -- 4 ------------------------------------------------------------------


def criterion_energy_inequality():
    """Coupled-run energy ledger and the decoupled per-step dissipation."""
    t0 = time.time()
    details = []
    ok = True
    A0 = sinusoidal_coefficient()
    for dt in (1.0 / 100.0, 1.0 / 200.0):
        grid = GridSpec(nx=64, ny=64, dt=dt, T=0.5, eps=0.125)
        f0 = gaussian_ball_density()
        ens = init_from_density(f0, (16, 16, 12, 12), vmax=2.0, grid=grid)
        runner = CoupledRunner(grid, A0, None, ens, cavity_stream_field(grid, 0.3), 0.125)
        e0 = runner.energy_ledger().total_energy()
        worst = -np.inf
        for _ in range(grid.n_steps):
            runner.step()
            rep = runner.energy_ledger()
            lhs = (rep.total_energy() + 2.0 * rep.drag_dissipation_cum
                   + A0.alpha * rep.viscous_dissipation_cum)
            worst = max(worst, lhs - e0 * (1.0 + 10.0 * dt))
        ok = ok and worst <= 0.0
        details.append("dt=%g margin %.2e" % (dt, -worst))
    # decoupled per-step inequality at solver tolerance
    from .stokes import NonlocalStokesSolver, StokesState
    from .fields import ScalarField

    grid = GridSpec(nx=64, ny=64, dt=0.01, T=0.3, eps=0.125)
    solver = NonlocalStokesSolver(grid, A0, None, eps=0.125, dt=grid.dt)
    state = StokesState(cavity_stream_field(grid, 0.5), ScalarField(grid), 0.0)
    worst = -np.inf
    for _ in range(grid.n_steps):
        prev_sq = state.u.l2() ** 2
        state = solver.step(state)
        lhs = state.u.l2() ** 2 + 2.0 * grid.dt * A0.alpha * solver.grad_sq(state.u)
        worst = max(worst, lhs - prev_sq - 1e-10)
    ok = ok and worst <= 0.0
    details.append("per-step margin %.2e" % (-worst))
    return _result("energy-inequality", 300.0, t0, ok, "; ".join(details))


# -- 5 ------------------------------------------------------------------


def criterion_fixed_point():
    """Picard iteration of the solution map converges monotonically."""
    t0 = time.time()
    grid = GridSpec(nx=16, ny=16, dt=1.0 / 64.0, T=0.25, eps=0.5)
    f0 = gaussian_ball_density()
    data = InitialData(f0=f0, u0=cavity_stream_field(grid, 0.15), vmax=2.0)
    res = fixed_point_solve(data, RegularizationParams(0.25), sinusoidal_coefficient(),
                            builtin_coefficient("exp-memory-kernel"), grid, eps=0.5,
                            lattice=(8, 8, 8, 8), tol=1e-8, max_iter=30)
    monotone = all(b < a for a, b in zip(res.residuals, res.residuals[1:]))
    ok = res.converged and res.iterations <= 30 and monotone and res.residuals[-1] <= 1e-8
    return _result("fixed-point-harness", 120.0, t0, ok,
                   "%d iterations, final residual %.2e, monotone=%s"
                   % (res.iterations, res.residuals[-1], monotone))


# -- 6 ------------------------------------------------------------------


def criterion_cell_trivial():
    """Constant coefficient: zero corrector and exact isotropic tensor."""
    t0 = time.time()
    alpha = 1.3
    spec = CellProblemSpec(constant_coefficient(alpha), ny_cell=32)
    corr = solve_basis_correctors(spec)
    chi_max = max(float(np.abs(v).max()) for v in corr.velocities.values())
    C0 = effective_C0(spec, corr)
    identity4 = np.einsum("ik,jl->ijkl", np.eye(2), np.eye(2))
    gap = float(np.abs(C0 - alpha * identity4).max())
    ok = chi_max <= 1e-12 and gap <= 1e-10
    return _result("cell-trivial", 10.0, t0, ok,
                   "|chi| = %.2e, |C0 - alpha Id| = %.2e" % (chi_max, gap))


# -- 7 ------------------------------------------------------------------


def criterion_effective_tensor_audit():
    """Symmetry, coercivity and the mean-coefficient upper bound."""
    t0 = time.time()
    details = []
    ok = True
    for coeff in (sinusoidal_coefficient(), checkerboard_coefficient()):
        spec = CellProblemSpec(coeff, ny_cell=64)
        corr = solve_basis_correctors(spec)
        tens = EffectiveTensors(effective_C0(spec, corr))
        asym = tens.asymmetry()
        rng = np.random.default_rng(11)
        coerc = voigt = np.inf
        for _ in range(100):
            xi = rng.normal(size=(2, 2))
            q = tens.quadratic(xi)
            coerc = min(coerc, q - coeff.alpha * np.sum(xi**2))
            voigt = min(voigt, voigt_upper_bound(corr.assembly, xi) - q)
        ok = ok and asym <= 1e-8 and coerc >= -1e-10 and voigt >= -1e-10
        details.append("%s: asym %.1e, coercivity margin %.2e, Voigt margin %.2e"
                       % (coeff.name, asym, coerc, voigt))
    return _result("effective-tensor-audit", 60.0, t0, ok, "; ".join(details))


# -- 8 ------------------------------------------------------------------


def criterion_mms_convergence():
    """Manufactured-solution orders: space >= 1.8, time >= 0.9."""
    from .mms import mms_l2q_error, mms_trajectory, stokes_mms_problem

    t0 = time.time()
    problem = stokes_mms_problem()
    errs = []
    for nx in (8, 16, 32):
        dt = 0.1 * (8.0 / nx) ** 2 / 8.0
        errs.append(mms_l2q_error(problem, nx, dt, 0.1))
    sp_orders = [float(np.log2(errs[i] / errs[i + 1])) for i in range(2)]

    nx, T = 24, 0.1
    ref = mms_trajectory(problem, nx, T / 256, T)
    terrs = []
    for m in (8, 16, 32):
        dt = T / m
        snaps = mms_trajectory(problem, nx, dt, T)
        e2 = 0.0
        for n in range(1, m + 1):
            tt = round(n * dt, 10)
            a, b = snaps[tt], ref[tt]
            e2 += dt * ((np.sum((a.u - b.u) ** 2) + np.sum((a.v - b.v) ** 2))
                        * a.grid.cell_area)
        terrs.append(float(np.sqrt(e2)))
    t_orders = [float(np.log2(terrs[i] / terrs[i + 1])) for i in range(2)]
    ok = min(sp_orders) >= 1.8 and min(t_orders) >= 0.9
    return _result("mms-convergence", 300.0, t0, ok,
                   "spatial orders %s, temporal orders %s"
                   % (["%.2f" % o for o in sp_orders], ["%.2f" % o for o in t_orders]))


# -- 9 ------------------------------------------------------------------


def criterion_volterra_oracle():
    """Memory quadrature against an adaptive dense Volterra integrator."""
    t0 = time.time()
    a0, mu, K, r, c0, T = 1.0, 2.0, 0.8, 1.0, 1.0, 1.0

    def rhs(t, z):
        c, gm = z
        return [-mu * (a0 * c + K * gm), c - r * gm]

    sol = solve_ivp(rhs, (0, T), [c0, 0.0], rtol=1e-11, atol=1e-13, dense_output=True).sol

    def kernel_ev(t, x, y):
        shape = np.broadcast(x[..., 0], y[..., 0]).shape
        out = np.zeros(shape + (2, 2))
        out[..., 0, 0] = K * np.exp(-r * t)
        out[..., 1, 1] = K * np.exp(-r * t)
        return out

    kern = OscillatoryCoefficient(kernel_ev, time_varying=True)
    worst = 0.0
    for n in (100, 200):
        dt = T / n
        c = shear_memory_trajectory(a0, kern, mu, c0, dt, n)
        ts = np.arange(n + 1) * dt
        ref = sol(ts)[0]
        rel = float(np.sqrt(np.sum(dt * (c - ref) ** 2) / np.sum(dt * ref**2)))
        worst = max(worst, rel / (2.0 * dt))
    return _result("volterra-oracle", 60.0, t0, worst <= 1.0,
                   "worst relative error / (2 dt) = %.2f" % worst)


# -- 10 -----------------------------------------------------------------


def criterion_homogenization_convergence():
    """Epsilon ladder: strict decay of the limit error, reconstruction gain."""
    t0 = time.time()
    cfg = RunConfig(scenario="coupled-cloud", nx=128, ny=128, dt=0.01, T=0.5,
                    eps_list=[0.25, 0.125, 0.0625], out_dir="unused", ny_cell=64,
                    lattice=(16, 16, 12, 12)).validate()
    table = run_convergence_study(cfg)
    err = table.err_u()
    ratios = [b / a for a, b in zip(err, err[1:])]
    gaps = table.gaps()
    ok = (all(r <= 0.8 for r in ratios)
          and all(b < a for a, b in zip(err, err[1:]))
          and table.err_rec()[-1] < err[-1]
          and all(b < a for a, b in zip(gaps, gaps[1:])))
    detail = ("err %s ratios %s rec[last] %.3e gaps %s"
              % (["%.3e" % e for e in err], ["%.2f" % r for r in ratios],
                 table.err_rec()[-1], ["%.3e" % g for g in gaps]))
    return _result("homogenization-convergence", 900.0, t0, ok, detail)


# -- 11 -----------------------------------------------------------------


def criterion_weak_form_residual():
    """Kinetic weak-form residual decreases under joint refinement."""
    t0 = time.time()
    phi = radial_test_function(T=0.2)
    residuals = []
    for nx, dt, lat in ((8, 0.04, 4), (16, 0.02, 8), (32, 0.01, 16)):
        grid = GridSpec(nx=nx, ny=nx, dt=dt, T=0.2, eps=0.25)
        ens = init_from_density(gaussian_ball_density(), (lat, lat, lat, lat),
                                vmax=2.0, grid=grid)
        runner = CoupledRunner(grid, sinusoidal_coefficient(), None, ens,
                               cavity_stream_field(grid, 0.3), 0.25,
                               record_particles=True)
        runner.run()
        residuals.append(weak_form_residual(runner.records, 0.25, dt, phi, grid))
    ok = residuals[0] > residuals[1] > residuals[2]
    return _result("weak-form-residual", 600.0, t0, ok,
                   "residuals " + ", ".join("%.3e" % r for r in residuals))


ALL_CRITERIA = [
    criterion_phase_volume,
    criterion_mass_positivity,
    criterion_specular_reflection,
    criterion_energy_inequality,
    criterion_fixed_point,
    criterion_cell_trivial,
    criterion_effective_tensor_audit,
    criterion_mms_convergence,
    criterion_volterra_oracle,
    criterion_homogenization_convergence,
    criterion_weak_form_residual,
]


def run_acceptance(selected=None, verbose=True):
    """Run the acceptance criteria; returns the list of results."""
    results = []
    for fn in ALL_CRITERIA:
        name = fn.__name__.replace("criterion_", "")
        if selected and name not in selected and fn.__name__ not in selected:
            continue
        res = fn()
        results.append(res)
        if verbose:
            print(res.line(), flush=True)
    return results
