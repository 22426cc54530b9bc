"""Oscillatory viscosity samplers.

A coefficient is a callable (t, x, y) -> symmetric 2x2 matrix where x is
the macroscopic position and y the fast variable on the unit cell.  The
fine-scale solvers evaluate it at y = frac(x / eps); the cell problem
evaluates it on the unit cell directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class OscillatoryCoefficient:
    """Symmetric matrix viscosity, 1-periodic in the fast variable.

    evaluator(t, x, y) must accept x, y of shape (..., 2) and return
    matrices of shape (..., 2, 2).  ``alpha`` is the coercivity constant
    (xi . A xi >= alpha |xi|^2 for the instantaneous viscosity role),
    ``bound`` a uniform upper bound on the entries.  ``time_varying`` and
    ``space_varying`` let the solvers cache assembled operators.
    """

    evaluator: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    alpha: float = 1.0
    bound: float = 1.0
    time_varying: bool = False
    space_varying: bool = False
    name: str = ""

    def __call__(self, t, x, y):
        return self.evaluator(t, np.asarray(x, dtype=float), np.asarray(y, dtype=float))


def sample_coefficient(coeff: OscillatoryCoefficient, t, x, eps):
    """Evaluate A(t, x, frac(x/eps)) at macroscopic points x of shape (..., 2)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    y = np.mod(x / eps, 1.0)
    return coeff(t, x, y)


def _iso(shape, a):
    """Isotropic matrix field a*I from a scalar array."""
    out = np.zeros(shape + (2, 2))
    out[..., 0, 0] = a
    out[..., 1, 1] = a
    return out


def constant_coefficient(alpha=1.0):
    def ev(t, x, y):
        return _iso(np.broadcast(x[..., 0], y[..., 0]).shape, alpha)

    return OscillatoryCoefficient(ev, alpha=alpha, bound=alpha, name="constant")


def sinusoidal_coefficient(base=2.0, amplitude=1.0):
    """a(y) = base + amplitude * sin(2 pi y1), isotropic."""
    if base - abs(amplitude) <= 0:
        raise ValueError("sinusoidal coefficient must stay positive")

    def ev(t, x, y):
        a = base + amplitude * np.sin(2.0 * np.pi * y[..., 0])
        return _iso(a.shape, a)

    return OscillatoryCoefficient(
        ev,
        alpha=base - abs(amplitude),
        bound=base + abs(amplitude),
        space_varying=True,
        name="sinusoidal-A0",
    )


def checkerboard_coefficient(low=1.0, high=3.0):
    """Two-phase unit cell: ``high`` on the diagonal squares, ``low`` elsewhere."""

    def ev(t, x, y):
        q1 = np.mod(y[..., 0], 1.0) < 0.5
        q2 = np.mod(y[..., 1], 1.0) < 0.5
        a = np.where(q1 == q2, high, low)
        return _iso(a.shape, a)

    return OscillatoryCoefficient(
        ev, alpha=min(low, high), bound=max(low, high),
        space_varying=True, name="checkerboard-A0",
    )


def exp_memory_coefficient(scale=0.5, base=2.0, amplitude=1.0, rate=1.0):
    """Memory viscosity A1(t, y) = scale * exp(-rate t) * b(y) * I."""

    def ev(t, x, y):
        b = (base + amplitude * np.cos(2.0 * np.pi * y[..., 1])) / (base + abs(amplitude))
        a = scale * np.exp(-rate * t) * b
        return _iso(a.shape, a)

    return OscillatoryCoefficient(
        ev, alpha=0.0, bound=scale, time_varying=True,
        space_varying=True, name="exp-memory-kernel",
    )


def matrix_coefficient(mat, alpha=None):
    """Constant anisotropic symmetric matrix coefficient."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (2, 2) or abs(mat[0, 1] - mat[1, 0]) > 1e-14:
        raise ValueError("need a symmetric 2x2 matrix")
    if alpha is None:
        alpha = float(np.linalg.eigvalsh(mat).min())

    def ev(t, x, y):
        shape = np.broadcast(x[..., 0], y[..., 0]).shape
        return np.broadcast_to(mat, shape + (2, 2)).copy()

    return OscillatoryCoefficient(ev, alpha=alpha, bound=float(np.abs(mat).max()))


def zero_coefficient():
    def ev(t, x, y):
        return _iso(np.broadcast(x[..., 0], y[..., 0]).shape, 0.0)

    return OscillatoryCoefficient(ev, alpha=0.0, bound=0.0, name="zero")


def audit_symmetry(coeff: OscillatoryCoefficient, n=1000, seed=0, t_max=1.0):
    """Max asymmetry |A - A^T| over random samples."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, t_max)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    y = rng.uniform(0.0, 1.0, size=(n, 2))
    A = coeff(t, x, y)
    return float(np.abs(A - np.swapaxes(A, -1, -2)).max())


def audit_coercivity(coeff: OscillatoryCoefficient, n=1000, seed=0, t_max=1.0):
    """Min of xi.A xi - alpha |xi|^2 over random (t, x, y, xi); >= -1e-12 passes."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    for t in rng.uniform(0.0, t_max, size=4):
        x = rng.uniform(0.0, 1.0, size=(n, 2))
        y = rng.uniform(0.0, 1.0, size=(n, 2))
        xi = rng.normal(size=(n, 2))
        A = coeff(t, x, y)
        quad = np.einsum("ki,kij,kj->k", xi, A, xi)
        gap = quad - coeff.alpha * np.sum(xi**2, axis=1)
        worst = min(worst, float(gap.min()))
    return worst


def audit_periodicity(coeff: OscillatoryCoefficient, n=200, seed=0):
    """Max change of A under unit shifts of the fast variable."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n, 2))
    y = rng.uniform(0.0, 1.0, size=(n, 2))
    t = 0.3
    base = coeff(t, x, y)
    worst = 0.0
    for shift in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([2.0, 3.0])):
        worst = max(worst, float(np.abs(coeff(t, x, y + shift) - base).max()))
    return worst


BUILTIN_COEFFICIENTS = {
    "constant": constant_coefficient,
    "sinusoidal-A0": sinusoidal_coefficient,
    "checkerboard-A0": checkerboard_coefficient,
    "exp-memory-kernel": exp_memory_coefficient,
    "zero": zero_coefficient,
}


def builtin_coefficient(name: str) -> OscillatoryCoefficient:
    try:
        return BUILTIN_COEFFICIENTS[name]()
    except KeyError:
        raise KeyError(
            "unknown coefficient %r (have: %s)" % (name, ", ".join(sorted(BUILTIN_COEFFICIENTS)))
        ) from None


def tabulated_coefficient(path) -> OscillatoryCoefficient:
    """Isotropic unit-cell viscosity from a tabulated scalar grid.

    The file holds an n x n CSV matrix of cell values sampled at the
    midpoints of a uniform unit-cell lattice; evaluation uses periodic
    bilinear interpolation.
    """
    table = np.atleast_2d(np.loadtxt(path, delimiter=","))
    if table.min() <= 0:
        raise ValueError("tabulated viscosity must be positive")
    n0, n1 = table.shape

    def ev(t, x, y):
        f0 = y[..., 0] * n0 - 0.5
        f1 = y[..., 1] * n1 - 0.5
        i0 = np.floor(f0).astype(np.int64)
        j0 = np.floor(f1).astype(np.int64)
        t0 = f0 - i0
        t1 = f1 - j0
        i0 %= n0
        j0 %= n1
        i1 = (i0 + 1) % n0
        j1 = (j0 + 1) % n1
        a = ((1 - t0) * (1 - t1) * table[i0, j0] + t0 * (1 - t1) * table[i1, j0]
             + (1 - t0) * t1 * table[i0, j1] + t0 * t1 * table[i1, j1])
        return _iso(a.shape, a)

    return OscillatoryCoefficient(ev, alpha=float(table.min()), bound=float(table.max()),
                                  space_varying=True, name="tabulated")


def resolve_coefficient(spec_id: str) -> OscillatoryCoefficient:
    """A named builtin, or the path of a tabulated cell data file."""
    import os

    if spec_id in BUILTIN_COEFFICIENTS:
        return builtin_coefficient(spec_id)
    if os.path.exists(spec_id):
        return tabulated_coefficient(spec_id)
    return builtin_coefficient(spec_id)  # raises with the list of builtins
