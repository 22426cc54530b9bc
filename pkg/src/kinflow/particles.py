"""Weighted deterministic particle ensembles for the kinetic phase.

The distribution f(t, x, v) is carried as a cloud of weighted particles
advanced along characteristics: dx/dt = eps * v, dv/dt = u - v.  With the
drift frozen over a step the velocity relaxation integrates exactly, so
the phase-space contraction of the flow (factor exp(-2 dt) per step in
two dimensions) is reproduced to roundoff, and wall interaction reduces
to specular mirroring of the straight-line sub-path.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .fields import (
    GridSpec,
    ScalarField,
    VectorField,
    deposit_scalar,
    deposit_vector,
    interpolate_velocity,
)


@dataclass
class ParticleEnsemble:
    """Phase-space particle cloud with nonnegative weights."""

    x: np.ndarray  # (K, 2) positions
    v: np.ndarray  # (K, 2) velocities
    w: np.ndarray  # (K,) weights

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=float))
        self.w = np.atleast_1d(np.asarray(self.w, dtype=float))
        if self.x.shape != self.v.shape or self.x.shape[0] != self.w.size:
            raise ValueError("inconsistent particle arrays")
        if self.w.size and self.w.min() < 0:
            raise ValueError("particle weights must be nonnegative")

    @property
    def count(self):
        return self.w.size

    def copy(self):
        return ParticleEnsemble(self.x.copy(), self.v.copy(), self.w.copy())

    def phase_points(self, idx):
        """Stacked (x, v) rows in R^4 for the tracked-simplex diagnostics."""
        idx = np.asarray(idx)
        return np.concatenate([self.x[idx], self.v[idx]], axis=1)

    @staticmethod
    def empty():
        return ParticleEnsemble(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))


@dataclass
class Moments:
    mass: float
    momentum: np.ndarray
    kinetic_energy: float
    second_moment: float


def moments(ens: ParticleEnsemble) -> Moments:
    """Mass, momentum, kinetic energy and |v|^2 moment of the cloud."""
    if ens.count == 0:
        return Moments(0.0, np.zeros(2), 0.0, 0.0)
    m2 = float(np.sum(ens.w * np.sum(ens.v**2, axis=1)))
    return Moments(
        mass=float(np.sum(ens.w)),
        momentum=ens.w @ ens.v,
        kinetic_energy=0.5 * m2,
        second_moment=m2,
    )


# ----------------------------------------------------------------------
# regularization apparatus
# ----------------------------------------------------------------------


def _bump(r):
    """Normalized C-infinity bump on (-1, 1), zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = np.abs(r) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


_BUMP_MASS = None


def _bump_mass():
    global _BUMP_MASS
    if _BUMP_MASS is None:
        s = np.linspace(-1.0, 1.0, 20001)
        _BUMP_MASS = float(np.trapezoid(_bump(s), s))
    return _BUMP_MASS


@dataclass
class RegularizationParams:
    """Mollifier radius and velocity truncation scale.

    lam in (0, 1]; lam = 0 is the sentinel for "no regularization" and is
    only legal where a caller explicitly supports the identity path.
    """

    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @property
    def active(self):
        return self.lam > 0.0

    def require_active(self):
        if not self.active:
            raise ValueError("operation requires lambda in (0, 1]")

    def gamma(self, v):
        """C^1 velocity truncation: 1 on |v| <= 1/lam, 0 on |v| >= 2/lam."""
        if not self.active:
            return np.ones(np.asarray(v).shape[:-1])
        speed = np.linalg.norm(np.asarray(v, dtype=float), axis=-1)
        s = np.clip(speed * self.lam - 1.0, 0.0, 1.0)
        return 1.0 - s * s * (3.0 - 2.0 * s)

    def mollifier_1d(self, r):
        """theta_lam in one variable: compact support (-lam, lam), unit mass."""
        self.require_active()
        return _bump(np.asarray(r) / self.lam) / (_bump_mass() * self.lam)


@dataclass
class InitialData:
    """Initial distribution and fluid field.

    f0(x, y, vx, vy) must broadcast over numpy arrays and be nonnegative;
    u0 should pass the discrete divergence audit.
    """

    f0: Callable[[np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    u0: VectorField
    vmax: float = 4.0

    def audit(self, n_samples=256, seed=0):
        """Check the divergence of u0 and the sign of sampled f0 values."""
        from .fields import divergence

        dmax = float(np.abs(divergence(self.u0).data).max())
        if dmax > 1e-8:
            raise ValueError("initial velocity fails the divergence audit: %.2e" % dmax)
        rng = np.random.default_rng(seed)
        g = self.u0.grid
        vals = self.f0(rng.uniform(0, g.Lx, n_samples), rng.uniform(0, g.Ly, n_samples),
                       rng.uniform(-self.vmax, self.vmax, n_samples),
                       rng.uniform(-self.vmax, self.vmax, n_samples))
        if np.any(np.asarray(vals) < 0):
            raise ValueError("initial distribution takes negative values")
        return self


def regularize_initial(data: InitialData, params: RegularizationParams, grid: GridSpec,
                       n_quad=9):
    """Mollified, velocity-truncated initial density gamma(v) (f0 * Theta).

    The (x, v) mollifier is a tensor product of 1d bumps of radius lam;
    the convolution is computed by midpoint quadrature over the kernel
    support with f0 extended by zero outside the spatial domain.  Returns
    an evaluator with the same call signature as f0.
    """
    params.require_active()
    lam = params.lam
    # midpoint quadrature nodes/weights on (-lam, lam) against the bump
    q = (np.arange(n_quad) + 0.5) / n_quad * 2.0 - 1.0
    q = q * lam
    kern = params.mollifier_1d(q)
    kern = kern / np.sum(kern)  # exact discrete mass 1

    # 4d tensor offsets, flattened
    OX, OY, OVX, OVY = np.meshgrid(q, q, q, q, indexing="ij")
    KW = (kern[:, None, None, None] * kern[None, :, None, None]
          * kern[None, None, :, None] * kern[None, None, None, :]).ravel()
    OX, OY, OVX, OVY = OX.ravel(), OY.ravel(), OVX.ravel(), OVY.ravel()

    def evaluator(x, y, vx, vy):
        x, y, vx, vy = np.broadcast_arrays(
            np.asarray(x, float), np.asarray(y, float),
            np.asarray(vx, float), np.asarray(vy, float))
        shape = x.shape
        xs = x.ravel()[:, None] - OX[None, :]
        ys = y.ravel()[:, None] - OY[None, :]
        vxs = vx.ravel()[:, None] - OVX[None, :]
        vys = vy.ravel()[:, None] - OVY[None, :]
        vals = data.f0(xs, ys, vxs, vys)
        inside = ((xs >= 0) & (xs <= grid.Lx) & (ys >= 0) & (ys <= grid.Ly))
        vals = np.where(inside, vals, 0.0)
        smoothed = vals @ KW
        gam = params.gamma(np.stack([vx.ravel(), vy.ravel()], axis=-1))
        return (smoothed * gam).reshape(shape)

    return evaluator


def init_from_density(f0, lattice, vmax, grid: GridSpec, drop_zero=True):
    """Deterministic midpoint-lattice sampling of a phase-space density.

    lattice = (nx, ny, nvx, nvy) node counts per dimension; particles sit
    at cell midpoints of Omega x [-vmax, vmax]^2 with weights
    f0 * cell volume, so the total mass is the midpoint quadrature of f0.
    """
    nx, ny, nvx, nvy = lattice
    if min(lattice) < 2 or vmax <= 0:
        raise ValueError("need at least 2 lattice points per dimension and vmax > 0")
    xs = (np.arange(nx) + 0.5) * grid.Lx / nx
    ys = (np.arange(ny) + 0.5) * grid.Ly / ny
    vxs = -vmax + (np.arange(nvx) + 0.5) * 2.0 * vmax / nvx
    vys = -vmax + (np.arange(nvy) + 0.5) * 2.0 * vmax / nvy
    cell = (grid.Lx / nx) * (grid.Ly / ny) * (2.0 * vmax / nvx) * (2.0 * vmax / nvy)

    X, Y, VX, VY = np.meshgrid(xs, ys, vxs, vys, indexing="ij")
    W = np.asarray(f0(X, Y, VX, VY), dtype=float) * cell
    if np.any(W < 0):
        raise ValueError("initial density produced negative weights")
    x = np.stack([X.ravel(), Y.ravel()], axis=1)
    v = np.stack([VX.ravel(), VY.ravel()], axis=1)
    w = W.ravel()
    if drop_zero:
        keep = w > 0
        x, v, w = x[keep], v[keep], w[keep]
    return ParticleEnsemble(x, v, w)


def thin(ens: ParticleEnsemble, max_count: int) -> ParticleEnsemble:
    """Keep the max_count heaviest particles (deterministic tie order)."""
    if ens.count <= max_count:
        return ens
    order = np.argsort(-ens.w, kind="stable")[:max_count]
    order.sort()
    return ParticleEnsemble(ens.x[order], ens.v[order], ens.w[order])


# ----------------------------------------------------------------------
# pushing and reflection
# ----------------------------------------------------------------------

_WALLS = {
    "left": (0, 0.0, +1.0),
    "right": (0, None, -1.0),
    "bottom": (1, 0.0, +1.0),
    "top": (1, None, -1.0),
}


def specular_reflect(x, v, wall, Lx=1.0, Ly=1.0):
    """Mirror a position across an axis-aligned wall and flip the normal velocity.

    The tangential component and the speed are preserved exactly (only one
    component is negated).
    """
    if wall not in _WALLS:
        raise ValueError("unknown wall %r" % (wall,))
    axis, plane, _ = _WALLS[wall]
    if plane is None:
        plane = Lx if axis == 0 else Ly
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    x[..., axis] = 2.0 * plane - x[..., axis]
    v[..., axis] = -v[..., axis]
    return x, v


def reflect_into_domain(x, v, Lx, Ly, max_sweeps=8):
    """Mirror escaped straight-line sub-paths back into the rectangle.

    At corners the two reflections compose (equivalent to v -> -v).  The
    CFL audit keeps displacements below one cell so a couple of sweeps
    always suffice.
    """
    for _ in range(max_sweeps):
        done = True
        for axis, L in ((0, Lx), (1, Ly)):
            low = x[:, axis] < 0.0
            if np.any(low):
                x[low, axis] = -x[low, axis]
                v[low, axis] = -v[low, axis]
                done = False
            high = x[:, axis] > L
            if np.any(high):
                x[high, axis] = 2.0 * L - x[high, axis]
                v[high, axis] = -v[high, axis]
                done = False
        if done:
            return x, v
    raise RuntimeError("particle escaped after %d reflection sweeps" % max_sweeps)


def relaxation_factors(dt):
    """(decay, position weight): v_new = U + (v-U)*decay, dx = eps*(U dt + (v-U)*pw)."""
    decay = np.exp(-dt)
    return decay, 1.0 - decay


def dissipation_weight(dt):
    """Exact integral of the squared drift gap over one step: int_0^dt e^(-2s) ds."""
    return 0.5 * (1.0 - np.exp(-2.0 * dt))


def push_with_drift(ens: ParticleEnsemble, U: np.ndarray, eps, dt, grid: GridSpec):
    """Advance one step against a frozen per-particle drift U.

    Exact relaxation in velocity, exact integral of eps*v(t) in position,
    then specular wall handling.  Weights are untouched.
    """
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("non-finite drift values reached the particle push")
    decay, pw = relaxation_factors(dt)
    if kernels.HAVE_NUMBA:
        x_new = np.ascontiguousarray(ens.x)
        v_new = np.ascontiguousarray(ens.v)
        x_new, v_new = x_new.copy(), v_new.copy()
        stuck = kernels.push_reflect(x_new, v_new, np.ascontiguousarray(U, dtype=float),
                                     eps, dt, grid.Lx, grid.Ly, decay, pw)
        if stuck:
            raise RuntimeError("%d particles escaped the reflection sweep cap" % stuck)
        return ParticleEnsemble(x_new, v_new, ens.w)
    dv = ens.v - U
    v_new = U + dv * decay
    x_new = ens.x + eps * (U * dt + dv * pw)
    x_new, v_new = reflect_into_domain(x_new, v_new, grid.Lx, grid.Ly)
    return ParticleEnsemble(x_new, v_new, ens.w)


def cfl_audit(ens: ParticleEnsemble, eps, dt, grid: GridSpec):
    """Warn when a particle could cross more than one cell in a step."""
    if ens.count == 0:
        return True
    vmax = float(np.abs(ens.v).max())
    limit = min(grid.dx, grid.dy)
    if eps * vmax * dt > limit:
        warnings.warn(
            "particle CFL exceeded: eps*|v|*dt = %.3g > %.3g" % (eps * vmax * dt, limit),
            RuntimeWarning,
        )
        return False
    return True


def push_particles(ens: ParticleEnsemble, u: VectorField, eps, dt):
    """Characteristic push against an interpolated fluid field."""
    if ens.count == 0:
        return ens
    grid = u.grid
    cfl_audit(ens, eps, dt, grid)
    ux, uy = interpolate_velocity(u, ens.x[:, 0], ens.x[:, 1])
    U = np.stack([ux, uy], axis=1)
    return push_with_drift(ens, U, eps, dt, grid)


# ----------------------------------------------------------------------
# sources and diagnostics
# ----------------------------------------------------------------------


def deposit_drag(ens: ParticleEnsemble, u: VectorField) -> VectorField:
    """Drag force density -sum_k w_k (u(x_k) - v_k), CIC-deposited on faces."""
    grid = u.grid
    if ens.count == 0:
        return VectorField(grid)
    ux, uy = interpolate_velocity(u, ens.x[:, 0], ens.x[:, 1])
    fx = -ens.w * (ux - ens.v[:, 0])
    fy = -ens.w * (uy - ens.v[:, 1])
    return deposit_vector(grid, ens.x[:, 0], ens.x[:, 1], fx, fy)


def deposit_number_density(ens: ParticleEnsemble, grid: GridSpec) -> ScalarField:
    """Spatial density int f dv on cell centers."""
    if ens.count == 0:
        return ScalarField(grid)
    return deposit_scalar(grid, ens.x[:, 0], ens.x[:, 1], ens.w)


def phase_volume(points: np.ndarray) -> float:
    """Absolute 4-volume of the simplex spanned by five phase-space points.

    Returns 0.0 for a degenerate simplex.
    """
    points = np.asarray(points, dtype=float)
    if points.shape != (5, 4):
        raise ValueError("need five points in R^4")
    M = points[1:] - points[0]
    vol = abs(float(np.linalg.det(M))) / 24.0
    if vol == 0.0:
        warnings.warn("degenerate tracked simplex", RuntimeWarning)
    return vol


def velocity_subvolume(points: np.ndarray) -> float:
    """Area of the velocity-space triangle of the first three tracked points."""
    points = np.asarray(points, dtype=float)
    V = points[1:3, 2:] - points[0, 2:]
    return abs(float(np.linalg.det(V))) / 2.0


def push_step_jacobian(eps, dt):
    """Analytic one-step phase-space Jacobian of the push in uniform drift."""
    decay, pw = relaxation_factors(dt)
    J = np.zeros((4, 4))
    J[:2, :2] = np.eye(2)
    J[:2, 2:] = eps * pw * np.eye(2)
    J[2:, 2:] = decay * np.eye(2)
    return J
