"""Run orchestration: scenario runs, tensor computation, the epsilon study."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig, parse_config
from .coupled import CoupledRunner
from .fields import GridSpec, ScalarField, VectorField, restrict_scalar_to_coarse
from .homogenization import (
    CellProblemSpec,
    Corrector,
    EffectiveTensors,
    effective_C0,
    effective_C1,
    solve_basis_correctors,
)
from .homogenized import HomogenizedRunner, corrector_reconstruction
from .io import Manifest, write_field_snapshot, write_particle_snapshot, write_timeseries
from .particles import RegularizationParams, deposit_number_density, init_from_density, moments, thin


@dataclass
class RunResult:
    grid: GridSpec
    fields: list          # velocity per time node (including t = 0)
    densities: list       # cell number density per time node
    runtime: float
    runner: object = None


def build_ensemble(cfg: RunConfig, grid: GridSpec, max_particles=None):
    sc = cfg.scenario_obj()
    data = sc.initial_data(grid).audit()
    ens = init_from_density(data.f0, sc.lattice, data.vmax, grid)
    if max_particles:
        ens = thin(ens, max_particles)
    return data, ens


def simulate(cfg: RunConfig, eps, manifest: Manifest = None, tag="", record=False,
             keep_fields=True) -> RunResult:
    """One fine-scale coupled run at a fixed epsilon."""
    grid = cfg.grid(eps)
    grid.require_resolved_oscillations()
    sc = cfg.scenario_obj()
    A0, A1 = sc.coefficients()
    data, ens = build_ensemble(cfg, grid)
    params = RegularizationParams(cfg.lam)
    runner = CoupledRunner(grid, A0, A1, ens, data.u0, eps, params=params,
                           record_particles=record)
    t0 = time.time()
    fields = [runner.state.fluid.u.copy()] if keep_fields else []
    densities = [deposit_number_density(runner.state.particles, grid)] if keep_fields else []
    energy_rows, moment_rows = [], []
    _append_series(runner, energy_rows, moment_rows)
    for n in range(grid.n_steps):
        runner.step()
        if keep_fields:
            fields.append(runner.state.fluid.u.copy())
            densities.append(deposit_number_density(runner.state.particles, grid))
        _append_series(runner, energy_rows, moment_rows)
        if manifest and cfg.snapshot_stride and (n + 1) % cfg.snapshot_stride == 0:
            stem = "%sstep%05d" % (tag, n + 1)
            manifest.write(stem + "_velocity.bin",
                           lambda p: write_field_snapshot(p, runner.state.fluid.u))
            manifest.write(stem + "_particles.bin",
                           lambda p: write_particle_snapshot(p, runner.state.particles))
    runtime = time.time() - t0
    if manifest:
        manifest.write(tag + "energy.csv", lambda p: write_timeseries(
            p, ["t", "fluid_ke", "particle_ke", "mass", "m2",
                "drag_diss_cum", "visc_diss_cum", "drag_l1_cum"], energy_rows))
        manifest.write(tag + "moments.csv", lambda p: write_timeseries(
            p, ["t", "mass", "px", "py", "ke", "m2"], moment_rows))
    return RunResult(grid, fields, densities, runtime, runner)


def _append_series(runner, energy_rows, moment_rows):
    rep = runner.energy_ledger()
    m = moments(runner.state.particles)
    t = runner.state.t
    energy_rows.append([t, rep.fluid_ke, rep.particle_ke, rep.mass, rep.second_moment,
                        rep.drag_dissipation_cum, rep.viscous_dissipation_cum,
                        rep.drag_l1_cum])
    moment_rows.append([t, m.mass, float(m.momentum[0]), float(m.momentum[1]),
                        m.kinetic_energy, m.second_moment])


def compute_cell_tensors(cfg: RunConfig, with_memory=None):
    """Correctors and effective tensors for the configured coefficients."""
    sc = cfg.scenario_obj()
    A0, A1 = sc.coefficients()
    spec = CellProblemSpec(A0, ny_cell=cfg.ny_cell, A1_cell=A1)
    correctors = solve_basis_correctors(spec)
    use_memory = (A1 is not None) if with_memory is None else with_memory
    if use_memory:
        times = np.arange(int(round(cfg.T / cfg.dt)) + 1) * cfg.dt
        tensors = effective_C1(spec, correctors, times)
    else:
        tensors = EffectiveTensors(effective_C0(spec, correctors))
    return spec, correctors, tensors


def homogenize(cfg: RunConfig, tensors: EffectiveTensors, manifest: Manifest = None,
               tag="hom_") -> RunResult:
    """Limit-system run emitting the same CSV/snapshot families as simulate."""
    grid = cfg.grid(1.0)
    sc = cfg.scenario_obj()
    data, ens = build_ensemble(cfg, grid)
    runner = HomogenizedRunner(grid, tensors, ens, data.u0, alpha=sc.coefficients()[0].alpha)
    t0 = time.time()
    fields = [runner.state.fluid.u.copy()]
    densities = [deposit_number_density(runner.state.particles, grid)]
    energy_rows, moment_rows = [], []
    _append_hom_series(runner, energy_rows, moment_rows)
    for n in range(grid.n_steps):
        runner.step()
        fields.append(runner.state.fluid.u.copy())
        densities.append(deposit_number_density(runner.state.particles, grid))
        _append_hom_series(runner, energy_rows, moment_rows)
        if manifest and cfg.snapshot_stride and (n + 1) % cfg.snapshot_stride == 0:
            stem = "%sstep%05d" % (tag, n + 1)
            manifest.write(stem + "_velocity.bin",
                           lambda p: write_field_snapshot(p, runner.state.fluid.u))
            manifest.write(stem + "_particles.bin",
                           lambda p: write_particle_snapshot(p, runner.state.particles))
    if manifest:
        manifest.write(tag + "energy.csv", lambda p: write_timeseries(
            p, ["t", "fluid_ke", "particle_ke", "mass", "m2",
                "drag_diss_cum", "visc_diss_cum"], energy_rows))
        manifest.write(tag + "moments.csv", lambda p: write_timeseries(
            p, ["t", "mass", "px", "py", "ke", "m2"], moment_rows))
    return RunResult(grid, fields, densities, time.time() - t0, runner)


def _append_hom_series(runner, energy_rows, moment_rows):
    m = moments(runner.state.particles)
    t = runner.state.t
    energy_rows.append([t, runner.state.fluid.u.l2() ** 2, m.kinetic_energy, m.mass,
                        m.second_moment, runner.drag_dissipation_cum,
                        runner.viscous_dissipation_cum])
    moment_rows.append([t, m.mass, float(m.momentum[0]), float(m.momentum[1]),
                        m.kinetic_energy, m.second_moment])


def l2q_field_gap(a: RunResult, b: RunResult, dt):
    total = 0.0
    for fa, fb in zip(a.fields[1:], b.fields[1:]):
        total += dt * ((np.sum((fa.u - fb.u) ** 2) + np.sum((fa.v - fb.v) ** 2))
                       * fa.grid.cell_area)
    return float(np.sqrt(total))


def _coarse_grid_for(grid: GridSpec, target=32):
    n = target if (grid.nx % target == 0 and grid.ny % target == 0) else grid.nx
    return GridSpec(nx=n, ny=n, dt=grid.dt, T=grid.T, Lx=grid.Lx, Ly=grid.Ly)


def moment_gap(a: RunResult, b: RunResult, dt, coarse_target=32):
    """L2(Q) distance of the spatial particle densities, cell-averaged.

    Densities are restricted to a coarse grid before comparison so the
    gap measures the transported mass distribution rather than the
    deposition stencil at the fine resolution.
    """
    coarse = _coarse_grid_for(a.grid, coarse_target)
    total = 0.0
    for da, db in zip(a.densities[1:], b.densities[1:]):
        ra = restrict_scalar_to_coarse(da, coarse)
        rb = restrict_scalar_to_coarse(db, coarse)
        total += dt * float(np.sum((ra.data - rb.data) ** 2) * coarse.cell_area)
    return float(np.sqrt(total))


def reconstruction_gap(fine: RunResult, hom: RunResult, correctors: Corrector, eps, dt):
    total = 0.0
    for fe, fh in zip(fine.fields[1:], hom.fields[1:]):
        rec = corrector_reconstruction(fh, correctors, eps)
        total += dt * ((np.sum((fe.u - rec.u) ** 2) + np.sum((fe.v - rec.v) ** 2))
                       * fe.grid.cell_area)
    return float(np.sqrt(total))


def _fine_job(cfg_text, eps):
    cfg = parse_config(cfg_text)
    res = simulate(cfg, eps, manifest=None)
    return (eps, [(f.u, f.v) for f in res.fields], [d.data for d in res.densities],
            res.runtime)


def _rehydrate(cfg, eps, payload):
    _, fields_raw, dens_raw, runtime = payload
    grid = cfg.grid(eps)
    fields = [VectorField(grid, u.copy(), v.copy()) for u, v in fields_raw]
    densities = [ScalarField(grid, d.copy()) for d in dens_raw]
    return RunResult(grid, fields, densities, runtime)


@dataclass
class ConvergenceTable:
    columns: tuple = ("eps", "err_u", "err_reconstruction", "moment_gap", "runtime")
    rows: list = field(default_factory=list)

    def err_u(self):
        return [r[1] for r in self.rows]

    def err_rec(self):
        return [r[2] for r in self.rows]

    def gaps(self):
        return [r[3] for r in self.rows]


def run_convergence_study(cfg: RunConfig, manifest: Manifest = None) -> ConvergenceTable:
    """Fine-scale runs over the epsilon ladder against one homogenized run.

    Emits one table row per epsilon; on a sub-run failure the rows
    computed so far are flushed before the error propagates.
    """
    spec, correctors, tensors = compute_cell_tensors(cfg)
    hom = homogenize(cfg, tensors, manifest=manifest)
    table = ConvergenceTable()
    dt = cfg.dt

    def flush():
        if manifest:
            manifest.write("convergence.csv",
                           lambda p: write_timeseries(p, table.columns, table.rows))

    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                payloads = list(pool.map(_fine_job, [cfg.to_text()] * len(cfg.eps_list),
                                         cfg.eps_list))
            results = {p[0]: _rehydrate(cfg, p[0], p) for p in payloads}
            ordered = [(eps, results[eps]) for eps in cfg.eps_list]
        else:
            ordered = [(eps, simulate(cfg, eps, manifest=manifest, tag="eps%g_" % eps))
                       for eps in cfg.eps_list]
        for eps, fine in ordered:
            err_u = l2q_field_gap(fine, hom, dt)
            err_rec = reconstruction_gap(fine, hom, correctors, eps, dt)
            gap = moment_gap(fine, hom, dt)
            table.rows.append([eps, err_u, err_rec, gap, fine.runtime])
    except Exception:
        flush()
        raise
    flush()
    return table
