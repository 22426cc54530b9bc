"""Coefficient sampler contracts and audits."""

import numpy as np
import pytest

from kinflow.coefficients import (
    audit_coercivity,
    audit_periodicity,
    audit_symmetry,
    builtin_coefficient,
    checkerboard_coefficient,
    constant_coefficient,
    matrix_coefficient,
    sample_coefficient,
    sinusoidal_coefficient,
)


class TestSampling:
    def test_constant_anywhere(self):
        c = constant_coefficient(alpha=1.7)
        A = sample_coefficient(c, 0.3, np.array([[0.1, 0.9]]), 0.25)
        assert np.allclose(A[0], 1.7 * np.eye(2))

    def test_sinusoidal_direct_evaluation(self):
        # a(y) = 2 + sin(2 pi y1) at x = (0.5, 0.5), eps = 1/4 -> y1 = 2 -> a = 2
        c = sinusoidal_coefficient(base=2.0, amplitude=1.0)
        A = sample_coefficient(c, 0.0, np.array([[0.5, 0.5]]), 0.25)
        assert np.allclose(A[0], 2.0 * np.eye(2), atol=1e-12)

    def test_checkerboard_shift_by_period(self):
        c = checkerboard_coefficient()
        eps = 0.125
        rng = np.random.default_rng(0)
        x = rng.uniform(0.1, 0.8, size=(64, 2))
        A1 = sample_coefficient(c, 0.0, x, eps)
        A2 = sample_coefficient(c, 0.0, x + np.array([eps, 0.0]), eps)
        assert np.array_equal(A1, A2)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_coefficient(constant_coefficient(), 0.0, np.zeros((1, 2)), 0.0)


class TestAudits:
    @pytest.mark.parametrize("name", ["constant", "sinusoidal-A0", "checkerboard-A0", "exp-memory-kernel"])
    def test_symmetry(self, name):
        assert audit_symmetry(builtin_coefficient(name)) <= 1e-14

    @pytest.mark.parametrize("name", ["constant", "sinusoidal-A0", "checkerboard-A0"])
    def test_coercivity(self, name):
        assert audit_coercivity(builtin_coefficient(name), n=1000) >= -1e-12

    @pytest.mark.parametrize("name", ["sinusoidal-A0", "checkerboard-A0", "exp-memory-kernel"])
    def test_periodicity(self, name):
        assert audit_periodicity(builtin_coefficient(name)) <= 1e-12

    def test_anisotropic_matrix(self):
        m = matrix_coefficient([[2.0, 0.5], [0.5, 1.0]])
        assert audit_symmetry(m) == 0.0
        assert audit_coercivity(m, n=500) >= -1e-12

    def test_unknown_name(self):
        with pytest.raises(KeyError):
            builtin_coefficient("nope")


class TestTabulated:
    def test_round_trip_and_periodicity(self, tmp_path):
        from kinflow.coefficients import resolve_coefficient

        rng = np.random.default_rng(3)
        table = 1.0 + rng.uniform(0.0, 2.0, size=(8, 8))
        path = tmp_path / "cell.csv"
        np.savetxt(path, table, delimiter=",")
        coeff = resolve_coefficient(str(path))
        # exact at lattice midpoints
        y = np.array([[(0 + 0.5) / 8, (3 + 0.5) / 8]])
        A = coeff(0.0, y, y)
        assert A[0, 0, 0] == pytest.approx(table[0, 3], rel=1e-12)
        assert audit_periodicity(coeff) <= 1e-12
        assert audit_coercivity(coeff, n=300) >= -1e-12

    def test_resolve_prefers_builtin(self):
        from kinflow.coefficients import resolve_coefficient

        assert resolve_coefficient("constant").name == "constant"
        with pytest.raises(KeyError):
            resolve_coefficient("missing-file-and-not-a-builtin")
