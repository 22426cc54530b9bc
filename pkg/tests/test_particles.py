"""Particle ensemble contracts: sampling, pushing, reflection, moments."""

import numpy as np
import pytest

from kinflow.fields import GridSpec, VectorField
from kinflow.particles import (
    InitialData,
    ParticleEnsemble,
    RegularizationParams,
    deposit_drag,
    init_from_density,
    moments,
    phase_volume,
    push_particles,
    push_step_jacobian,
    push_with_drift,
    regularize_initial,
    specular_reflect,
    thin,
    velocity_subvolume,
)


def make_grid(nx=16, ny=16):
    return GridSpec(nx=nx, ny=ny, dt=0.01, T=1.0)


def uniform_field(grid, cx, cy):
    vec = VectorField(grid)
    vec.u[:] = cx
    vec.v[:] = cy
    return vec


class TestMoments:
    def test_empty(self):
        m = moments(ParticleEnsemble.empty())
        assert m.mass == 0.0 and m.second_moment == 0.0

    def test_single_particle_arithmetic(self):
        ens = ParticleEnsemble([[0.5, 0.5]], [[3.0, 4.0]], [2.0])
        m = moments(ens)
        assert m.mass == 2.0
        assert np.allclose(m.momentum, [6.0, 8.0])
        assert m.kinetic_energy == 25.0
        assert m.second_moment == 50.0

    def test_second_moment_against_dense_quadrature(self):
        # Maxwellian-like profile: lattice quadrature vs a much denser one
        grid = make_grid()
        f0 = lambda x, y, vx, vy: np.exp(-(vx**2 + vy**2)) * np.ones_like(x)
        ens = init_from_density(f0, (6, 6, 24, 24), vmax=4.0, grid=grid)
        dense = init_from_density(f0, (6, 6, 96, 96), vmax=4.0, grid=grid)
        m = moments(ens).second_moment
        m_ref = moments(dense).second_moment
        assert m == pytest.approx(m_ref, rel=1e-2)


class TestInitFromDensity:
    def test_zero_density(self):
        ens = init_from_density(lambda x, y, vx, vy: np.zeros_like(x), (4, 4, 4, 4), 1.0, make_grid())
        assert moments(ens).mass == 0.0

    def test_uniform_density_total_mass(self):
        # f0 = 1 on Omega x [-1,1]^2: exact integral 4 |Omega| = 4
        ens = init_from_density(lambda x, y, vx, vy: np.ones_like(x), (8, 8, 8, 8), 1.0, make_grid())
        assert moments(ens).mass == pytest.approx(4.0, rel=1e-2)

    def test_hat_product_matches_1d_quadrature_oracle(self):
        # hat kinks on lattice cell boundaries -> midpoint sum = exact integral,
        # compared against an independent dense 1d trapezoid oracle
        hat = lambda s, c, r: np.clip(1.0 - np.abs(s - c) / r, 0.0, None)
        f0 = lambda x, y, vx, vy: hat(x, 0.5, 0.25) * hat(y, 0.5, 0.5) * hat(vx, 0.0, 1.0) * hat(vy, 0.0, 0.5)
        ens = init_from_density(f0, (8, 8, 8, 8), vmax=1.0, grid=make_grid())
        s = np.linspace(0.0, 1.0, 4001)
        sv = np.linspace(-1.0, 1.0, 4001)
        oracle = (
            np.trapezoid(hat(s, 0.5, 0.25), s)
            * np.trapezoid(hat(s, 0.5, 0.5), s)
            * np.trapezoid(hat(sv, 0.0, 1.0), sv)
            * np.trapezoid(hat(sv, 0.0, 0.5), sv)
        )
        assert moments(ens).mass == pytest.approx(oracle, rel=1e-10)

    def test_thinning_keeps_heaviest(self):
        grid = make_grid()
        f0 = lambda x, y, vx, vy: np.exp(-8 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)) / (1 + vx**2 + vy**2)
        ens = init_from_density(f0, (8, 8, 8, 8), 2.0, grid)
        small = thin(ens, 100)
        assert small.count == 100
        assert small.w.min() >= np.partition(ens.w, -100)[-100] - 1e-15


class TestPush:
    def test_exact_relaxation(self):
        grid = make_grid()
        ens = ParticleEnsemble([[0.5, 0.5]], [[1.0, 0.0]], [1.0])
        out = push_particles(ens, uniform_field(grid, 0.0, 0.0), eps=1.0, dt=np.log(2.0))
        assert out.v[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert out.v[0, 1] == 0.0

    def test_frozen_transport_at_eps_zero(self):
        grid = make_grid()
        rng = np.random.default_rng(0)
        ens = ParticleEnsemble(rng.uniform(0.2, 0.8, (40, 2)), rng.normal(size=(40, 2)), np.ones(40))
        out = push_particles(ens, uniform_field(grid, 0.3, -0.1), eps=0.0, dt=0.1)
        assert np.array_equal(out.x, ens.x)
        assert np.all(np.abs(out.v - ens.v) > 0)  # velocities relaxed

    def test_equilibrium_straight_line(self):
        grid = make_grid()
        c = np.array([0.25, -0.125])
        ens = ParticleEnsemble([[0.5, 0.5]], [c], [1.0])
        out = push_particles(ens, uniform_field(grid, c[0], c[1]), eps=0.5, dt=0.1)
        assert np.allclose(out.v[0], c, atol=1e-15)
        assert np.allclose(out.x[0], [0.5, 0.5] + 0.5 * 0.1 * c, atol=1e-15)

    def test_mass_conserved_over_many_steps(self):
        grid = make_grid()
        rng = np.random.default_rng(1)
        ens = ParticleEnsemble(rng.uniform(0, 1, (200, 2)), rng.normal(0, 2, (200, 2)), rng.uniform(0, 1, 200))
        total0 = moments(ens).mass
        field = uniform_field(grid, 0.2, 0.1)
        for _ in range(1000):
            ens = push_particles(ens, field, eps=0.25, dt=0.01)
        assert moments(ens).mass == pytest.approx(total0, rel=1e-13)
        assert ens.w.min() >= 0
        assert np.all((ens.x >= 0) & (ens.x <= 1))

    def test_nonfinite_field_rejected(self):
        grid = make_grid()
        bad = uniform_field(grid, np.nan, 0.0)
        ens = ParticleEnsemble([[0.5, 0.5]], [[0.0, 0.0]], [1.0])
        with pytest.raises(FloatingPointError):
            push_particles(ens, bad, eps=1.0, dt=0.1)


class TestReflection:
    def test_formula(self):
        x, v = specular_reflect([0.5, -0.1], [1.0, -2.0], "bottom")
        assert np.allclose(v, [1.0, 2.0])
        assert np.allclose(x, [0.5, 0.1])

    def test_speed_preserved_bitwise(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            v = rng.normal(size=2)
            _, vr = specular_reflect([0.5, -0.01], v, "bottom")
            assert np.hypot(*vr) == np.hypot(*v)

    def test_involution_bitwise(self):
        rng = np.random.default_rng(3)
        for wall in ("left", "right", "bottom", "top"):
            x = rng.uniform(0, 1, 2)
            v = rng.normal(size=2)
            x1, v1 = specular_reflect(x, v, wall)
            x2, v2 = specular_reflect(x1, v1, wall)
            assert np.array_equal(v2, v)
            assert np.allclose(x2, x, atol=1e-15)


class TestPhaseVolume:
    def unit_simplex(self):
        pts = np.zeros((5, 4))
        pts[1:] = np.eye(4)
        return pts

    def test_unit_simplex_volume(self):
        assert phase_volume(self.unit_simplex()) == pytest.approx(1.0 / 24.0, rel=1e-14)

    def test_contraction_matches_jacobian_oracle(self):
        grid = make_grid()
        eps, dt, n = 1.0, 1e-3, 500
        base = np.array([0.5, 0.5, 0.0, 0.0])
        scale = 0.02
        pts = base + scale * np.vstack([np.zeros(4), np.eye(4)])
        ens = ParticleEnsemble(pts[:, :2], pts[:, 2:], np.ones(5))
        v0 = phase_volume(ens.phase_points(range(5)))
        drift = np.tile(np.array([0.05, -0.02]), (5, 1))
        for _ in range(n):
            ens = push_with_drift(ens, drift, eps, dt, grid)
        v1 = phase_volume(ens.phase_points(range(5)))
        oracle = np.linalg.det(push_step_jacobian(eps, dt)) ** n
        assert v1 / v0 == pytest.approx(oracle, rel=1e-9)
        assert oracle == pytest.approx(np.exp(-2 * n * dt), rel=1e-12)

    def test_velocity_subspace_factor_exact(self):
        grid = make_grid()
        dt, n = 2e-3, 200
        pts = np.array([[0.5, 0.5, 0.0, 0.0], [0.5, 0.52, 0.03, 0.0], [0.48, 0.5, 0.0, 0.02],
                        [0.52, 0.5, 0.01, 0.01], [0.5, 0.48, -0.01, 0.02]])
        ens = ParticleEnsemble(pts[:, :2], pts[:, 2:], np.ones(5))
        a0 = velocity_subvolume(ens.phase_points(range(5)))
        drift = np.tile(np.array([0.1, 0.1]), (5, 1))
        for _ in range(n):
            ens = push_with_drift(ens, drift, 1.0, dt, grid)
        a1 = velocity_subvolume(ens.phase_points(range(5)))
        assert a1 / a0 == pytest.approx(np.exp(-2 * n * dt), rel=1e-12)

    def test_dt_zero_ratio_one(self):
        assert np.linalg.det(push_step_jacobian(0.5, 0.0)) == pytest.approx(1.0, abs=1e-15)


class TestDragDeposit:
    def test_empty_is_zero(self):
        grid = make_grid()
        out = deposit_drag(ParticleEnsemble.empty(), VectorField(grid))
        assert out.max_norm() == 0.0

    def test_symmetric_pair_cancels(self):
        grid = make_grid()
        ens = ParticleEnsemble([[0.5, 0.5], [0.5, 0.5]], [[1.0, 0.0], [-1.0, 0.0]], [0.7, 0.7])
        out = deposit_drag(ens, VectorField(grid))
        assert np.abs(np.sum(out.u)) * grid.cell_area < 1e-14
        assert out.max_norm() < 1e-12 / grid.cell_area  # cancels pointwise too

    def test_integrated_force_direct_sum_oracle(self):
        grid = make_grid()
        field = uniform_field(grid, 0.4, -0.3)
        ens = ParticleEnsemble([[0.3, 0.7]], [[1.0, 2.0]], [1.5])
        out = deposit_drag(ens, field)
        got = np.array([np.sum(out.u), np.sum(out.v)]) * grid.cell_area
        oracle = -1.5 * (np.array([0.4, -0.3]) - np.array([1.0, 2.0]))
        assert np.allclose(got, oracle, rtol=1e-12)


class TestRegularization:
    def test_lambda_validation(self):
        with pytest.raises(ValueError):
            RegularizationParams(lam=1.5)
        RegularizationParams(lam=0.0)  # sentinel allowed

    def test_gamma_profile(self):
        p = RegularizationParams(lam=0.5)
        v = np.array([[1.0, 0.0], [0.0, 3.0], [5.0, 0.0]])
        g = p.gamma(v)
        assert g[0] == 1.0  # |v| = 1 <= 1/lam = 2
        assert 0.0 < g[1] < 1.0  # between 2 and 4
        assert g[2] == 0.0  # |v| = 5 >= 2/lam = 4

    def test_gamma_monotone_c1(self):
        p = RegularizationParams(lam=0.5)
        speeds = np.linspace(1.9, 4.1, 200)
        vals = p.gamma(np.stack([speeds, np.zeros_like(speeds)], axis=-1))
        assert np.all(np.diff(vals) <= 1e-12)
        assert np.all((vals >= 0) & (vals <= 1))

    def make_data(self, f0):
        grid = make_grid()
        return InitialData(f0=f0, u0=VectorField(grid), vmax=4.0), grid

    def test_zero_input(self):
        data, grid = self.make_data(lambda x, y, vx, vy: np.zeros_like(x))
        ev = regularize_initial(data, RegularizationParams(0.5), grid)
        assert ev(0.5, 0.5, 0.0, 0.0) == 0.0

    def test_locally_constant_plateau(self):
        c = 2.3
        data, grid = self.make_data(lambda x, y, vx, vy: np.full_like(x, c))
        ev = regularize_initial(data, RegularizationParams(0.25), grid)
        # deep inside the domain, small velocity: mollifier mass is 1
        assert ev(0.5, 0.5, 0.2, -0.3) == pytest.approx(c, rel=1e-12)

    def test_velocity_truncation_kills_large_v(self):
        data, grid = self.make_data(lambda x, y, vx, vy: 1.0 / (1.0 + vx**2 + vy**2))
        ev = regularize_initial(data, RegularizationParams(0.5), grid)
        assert ev(0.5, 0.5, 4.0, 0.0) == 0.0
        assert ev(0.5, 0.5, 0.5, 0.0) > 0.0

    def test_requires_active_lambda(self):
        data, grid = self.make_data(lambda x, y, vx, vy: np.zeros_like(x))
        with pytest.raises(ValueError):
            regularize_initial(data, RegularizationParams(0.0), grid)


class TestInitialDataAudit:
    def test_negative_density_rejected(self):
        grid = make_grid()
        data = InitialData(f0=lambda x, y, vx, vy: -np.ones_like(x),
                           u0=VectorField(grid), vmax=1.0)
        with pytest.raises(ValueError):
            data.audit()

    def test_divergent_velocity_rejected(self):
        grid = make_grid()
        u0 = VectorField(grid)
        u0.u[4, 5] = 1.0  # a lone face: divergence in the adjacent cells
        data = InitialData(f0=lambda x, y, vx, vy: np.ones_like(x), u0=u0, vmax=1.0)
        with pytest.raises(ValueError):
            data.audit()

    def test_clean_data_passes(self):
        from kinflow.fields import cavity_stream_field

        grid = make_grid()
        data = InitialData(f0=lambda x, y, vx, vy: np.ones_like(x),
                           u0=cavity_stream_field(grid, 0.4), vmax=1.0)
        assert data.audit() is data
