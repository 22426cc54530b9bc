"""Grids, staggered fields, coefficient sampling and particle/grid transfer.

The domain is the unit rectangle (0, Lx) x (0, Ly) discretized on a MAC
grid: pressure and tensors at cell centers, the x-velocity on vertical
faces and the y-velocity on horizontal faces.  Interpolation and
deposition share one bilinear kernel so that the particle/grid transfer
pair is an exact adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


def _is_reciprocal_of_integer(eps, tol=1e-12):
    if eps <= 0 or eps > 1:
        return False
    m = 1.0 / eps
    return abs(m - round(m)) <= tol * m


@dataclass
class GridSpec:
    """Geometry and time-stepping parameters of a run."""

    nx: int
    ny: int
    dt: float
    T: float
    eps: float = 1.0
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs nx, ny >= 4")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T < self.dt:
            raise ValueError("final time must cover at least one step")
        if not _is_reciprocal_of_integer(self.eps):
            raise ValueError(
                "eps must be the reciprocal of a positive integer, got %r" % (self.eps,)
            )

    @property
    def dx(self):
        return self.Lx / self.nx

    @property
    def dy(self):
        return self.Ly / self.ny

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def require_resolved_oscillations(self, cells_per_period=8):
        """Fine-scale runs need enough cells inside one microstructure period."""
        if self.nx * self.eps < cells_per_period or self.ny * self.eps < cells_per_period:
            raise ValueError(
                "under-resolved oscillation: nx*eps = %g < %d"
                % (self.nx * self.eps, cells_per_period)
            )

    # coordinate arrays ---------------------------------------------------

    def cell_centers(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return x, y

    def u_face_coords(self):
        x = np.arange(self.nx + 1) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dy
        return x, y

    def v_face_coords(self):
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = np.arange(self.ny + 1) * self.dy
        return x, y

    def node_coords(self):
        x = np.arange(self.nx + 1) * self.dx
        y = np.arange(self.ny + 1) * self.dy
        return x, y


@dataclass
class ScalarField:
    """Cell-centered scalar (pressure, densities)."""

    grid: GridSpec
    data: np.ndarray = None

    def __post_init__(self):
        if self.data is None:
            self.data = np.zeros((self.grid.nx, self.grid.ny))
        assert self.data.shape == (self.grid.nx, self.grid.ny)

    def copy(self):
        return ScalarField(self.grid, self.data.copy())

    def mean(self):
        return float(self.data.mean())

    def l2(self):
        return float(np.sqrt(np.sum(self.data**2) * self.grid.cell_area))


@dataclass
class VectorField:
    """MAC-staggered velocity: u on vertical faces, v on horizontal faces."""

    grid: GridSpec
    u: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        g = self.grid
        if self.u is None:
            self.u = np.zeros((g.nx + 1, g.ny))
        if self.v is None:
            self.v = np.zeros((g.nx, g.ny + 1))
        assert self.u.shape == (g.nx + 1, g.ny)
        assert self.v.shape == (g.nx, g.ny + 1)

    def copy(self):
        return VectorField(self.grid, self.u.copy(), self.v.copy())

    def zero_like(self):
        return VectorField(self.grid)

    def enforce_wall_values(self):
        """Zero the normal components stored on the boundary faces."""
        self.u[0, :] = 0.0
        self.u[-1, :] = 0.0
        self.v[:, 0] = 0.0
        self.v[:, -1] = 0.0
        return self

    def l2(self):
        a = self.grid.cell_area
        return float(np.sqrt((np.sum(self.u**2) + np.sum(self.v**2)) * a))

    def max_norm(self):
        return max(float(np.abs(self.u).max()), float(np.abs(self.v).max()))

    def axpy(self, alpha, other):
        self.u += alpha * other.u
        self.v += alpha * other.v
        return self


@dataclass
class TensorField:
    """Cell-centered 2x2 tensors (velocity gradients, memory stresses)."""

    grid: GridSpec
    data: np.ndarray = None

    def __post_init__(self):
        if self.data is None:
            self.data = np.zeros((self.grid.nx, self.grid.ny, 2, 2))
        assert self.data.shape == (self.grid.nx, self.grid.ny, 2, 2)

    def copy(self):
        return TensorField(self.grid, self.data.copy())


# ----------------------------------------------------------------------
# discrete divergence / gradient on the MAC layout
# ----------------------------------------------------------------------


def divergence(vec: VectorField) -> ScalarField:
    """Cell-centered discrete divergence of a staggered field."""
    g = vec.grid
    div = (vec.u[1:, :] - vec.u[:-1, :]) / g.dx + (vec.v[:, 1:] - vec.v[:, :-1]) / g.dy
    return ScalarField(g, div)


def gradient_to_faces(phi: ScalarField) -> VectorField:
    """Discrete gradient of a cell scalar, zero on boundary faces."""
    g = phi.grid
    out = VectorField(g)
    out.u[1:-1, :] = (phi.data[1:, :] - phi.data[:-1, :]) / g.dx
    out.v[:, 1:-1] = (phi.data[:, 1:] - phi.data[:, :-1]) / g.dy
    return out


def velocity_gradient(vec: VectorField) -> TensorField:
    """Cell-centered gradient tensor G[i, j] = d(u_i)/d(x_j).

    The diagonal entries are natural central differences; the off-diagonal
    entries are averaged from the four surrounding node values with no-slip
    ghost reflection at the walls.
    """
    g = vec.grid
    G = np.zeros((g.nx, g.ny, 2, 2))
    G[:, :, 0, 0] = (vec.u[1:, :] - vec.u[:-1, :]) / g.dx
    G[:, :, 1, 1] = (vec.v[:, 1:] - vec.v[:, :-1]) / g.dy

    # du/dy at nodes (i=0..nx, j=0..ny) using ghost rows u[:, -1] = -u[:, 0]
    u_ext = np.concatenate([-vec.u[:, :1], vec.u, -vec.u[:, -1:]], axis=1)
    dudy_n = (u_ext[:, 1:] - u_ext[:, :-1]) / g.dy  # (nx+1, ny+1)
    G[:, :, 0, 1] = 0.25 * (
        dudy_n[:-1, :-1] + dudy_n[1:, :-1] + dudy_n[:-1, 1:] + dudy_n[1:, 1:]
    )

    v_ext = np.concatenate([-vec.v[:1, :], vec.v, -vec.v[-1:, :]], axis=0)
    dvdx_n = (v_ext[1:, :] - v_ext[:-1, :]) / g.dx  # (nx+1, ny+1)
    G[:, :, 1, 0] = 0.25 * (
        dvdx_n[:-1, :-1] + dvdx_n[1:, :-1] + dvdx_n[:-1, 1:] + dvdx_n[1:, 1:]
    )
    return TensorField(g, G)


# ----------------------------------------------------------------------
# bilinear particle <-> grid transfer
# ----------------------------------------------------------------------


def _stencil_1d(f, n_pts):
    i0 = np.floor(f).astype(np.int64)
    np.clip(i0, 0, n_pts - 2, out=i0)
    return i0, f - i0


def _bilinear_stencil(px, py, x0, y0, dx, dy, nx_pts, ny_pts):
    """Index pairs and weights of the shared bilinear kernel.

    Lattice points sit at (x0 + i*dx, y0 + j*dy) with i < nx_pts,
    j < ny_pts.  The base index is clipped to keep the stencil inside the
    array while the fractional coordinate is left unclipped, which turns
    boundary-adjacent evaluation into linear extrapolation and keeps the
    kernel exact on affine fields with weights that always sum to one.
    """
    i0, tx = _stencil_1d((np.asarray(px) - x0) / dx, nx_pts)
    j0, ty = _stencil_1d((np.asarray(py) - y0) / dy, ny_pts)
    sx = 1.0 - tx
    sy = 1.0 - ty
    return i0, j0, (sx * sy, tx * sy, sx * ty, tx * ty)


def _staggered_stencils(grid, px, py):
    """Stencils on both face grids, sharing the normalized coordinates."""
    fx = np.asarray(px) / grid.dx
    fy = np.asarray(py) / grid.dy
    iu, txu = _stencil_1d(fx, grid.nx + 1)
    ju, tyu = _stencil_1d(fy - 0.5, grid.ny)
    iv, txv = _stencil_1d(fx - 0.5, grid.nx)
    jv, tyv = _stencil_1d(fy, grid.ny + 1)
    su, syu = 1.0 - txu, 1.0 - tyu
    sv, syv = 1.0 - txv, 1.0 - tyv
    return ((iu, ju, (su * syu, txu * syu, su * tyu, txu * tyu)),
            (iv, jv, (sv * syv, txv * syv, sv * tyv, txv * tyv)))


def _gather(arr, i0, j0, w):
    w00, w10, w01, w11 = w
    return (
        w00 * arr[i0, j0]
        + w10 * arr[i0 + 1, j0]
        + w01 * arr[i0, j0 + 1]
        + w11 * arr[i0 + 1, j0 + 1]
    )


def _scatter(shape, i0, j0, w, payload):
    w00, w10, w01, w11 = w
    ny_pts = shape[1]
    n = shape[0] * shape[1]
    flat = np.zeros(n)
    for di, dj, ww in ((0, 0, w00), (1, 0, w10), (0, 1, w01), (1, 1, w11)):
        idx = (i0 + di) * ny_pts + (j0 + dj)
        flat += np.bincount(idx, weights=ww * payload, minlength=n)
    return flat.reshape(shape)


def _check_inside(grid, px, py):
    if np.any(px < 0) or np.any(px > grid.Lx) or np.any(py < 0) or np.any(py > grid.Ly):
        raise ValueError("evaluation point outside the domain")


def interpolate_velocity(vec: VectorField, px, py, check=True):
    """Bilinear staggered interpolation of (u, v) at points inside the domain.

    Reproduces globally affine fields exactly.  Raises for points outside
    the closed domain (check=False skips the audit for callers that hold
    the containment invariant themselves).
    """
    g = vec.grid
    if check:
        _check_inside(g, px, py)
    if kernels.HAVE_NUMBA:
        px = np.ascontiguousarray(px, dtype=float)
        py = np.ascontiguousarray(py, dtype=float)
        return kernels.interp_staggered(vec.u, vec.v, px, py, g.dx, g.dy)
    (iu, ju, wu), (iv, jv, wv) = _staggered_stencils(g, px, py)
    return _gather(vec.u, iu, ju, wu), _gather(vec.v, iv, jv, wv)


def interpolate_velocity_at(vec: VectorField, x) -> np.ndarray:
    """Single-point convenience wrapper returning a length-2 vector."""
    ux, uy = interpolate_velocity(vec, np.asarray([x[0]]), np.asarray([x[1]]))
    return np.array([ux[0], uy[0]])


def deposit_vector(grid: GridSpec, px, py, fx, fy, check=True) -> VectorField:
    """Deposit per-particle vector payloads as a staggered density field.

    Adjoint of interpolate_velocity: the grid inner product of the result
    with any staggered field equals the direct particle sum of payloads
    against the interpolated field.  The result is divided by the cell
    area, i.e. it is a density.
    """
    g = grid
    if check:
        _check_inside(g, px, py)
    out = VectorField(g)
    if kernels.HAVE_NUMBA:
        kernels.scatter_staggered(out.u, out.v,
                                  np.ascontiguousarray(px, dtype=float),
                                  np.ascontiguousarray(py, dtype=float),
                                  np.ascontiguousarray(fx, dtype=float),
                                  np.ascontiguousarray(fy, dtype=float), g.dx, g.dy)
        out.u /= g.cell_area
        out.v /= g.cell_area
        return out
    (iu, ju, wu), (iv, jv, wv) = _staggered_stencils(g, px, py)
    out.u = _scatter(out.u.shape, iu, ju, wu, np.asarray(fx)) / g.cell_area
    out.v = _scatter(out.v.shape, iv, jv, wv, np.asarray(fy)) / g.cell_area
    return out


def deposit_scalar(grid: GridSpec, px, py, payload) -> ScalarField:
    """Deposit a scalar payload (e.g. particle mass) on cell centers."""
    g = grid
    _check_inside(g, px, py)
    if kernels.HAVE_NUMBA:
        data = np.zeros((g.nx, g.ny))
        kernels.scatter_cells(data, np.ascontiguousarray(px, dtype=float),
                              np.ascontiguousarray(py, dtype=float),
                              np.ascontiguousarray(payload, dtype=float), g.dx, g.dy)
        return ScalarField(g, data / g.cell_area)
    i0, j0, w = _bilinear_stencil(px, py, 0.5 * g.dx, 0.5 * g.dy, g.dx, g.dy, g.nx, g.ny)
    data = _scatter((g.nx, g.ny), i0, j0, w, np.asarray(payload)) / g.cell_area
    return ScalarField(g, data)


def interpolate_scalar(phi: ScalarField, px, py):
    """Bilinear interpolation of a cell-centered scalar."""
    g = phi.grid
    _check_inside(g, px, py)
    i0, j0, w = _bilinear_stencil(px, py, 0.5 * g.dx, 0.5 * g.dy, g.dx, g.dy, g.nx, g.ny)
    return _gather(phi.data, i0, j0, w)


# ----------------------------------------------------------------------
# construction helpers
# ----------------------------------------------------------------------


def velocity_from_stream(grid: GridSpec, psi_nodes: np.ndarray) -> VectorField:
    """Exactly divergence-free field from a stream function on grid nodes.

    u = d(psi)/dy on vertical faces, v = -d(psi)/dx on horizontal faces;
    the discrete divergence telescopes to zero.  A stream function that
    vanishes on the boundary nodes yields zero normal velocity at walls.
    """
    g = grid
    assert psi_nodes.shape == (g.nx + 1, g.ny + 1)
    out = VectorField(g)
    out.u = (psi_nodes[:, 1:] - psi_nodes[:, :-1]) / g.dy
    out.v = -(psi_nodes[1:, :] - psi_nodes[:-1, :]) / g.dx
    return out


def cavity_stream_field(grid: GridSpec, amplitude=1.0) -> VectorField:
    """Driven-cavity-like swirl: psi ~ (sin(pi x) sin(pi y))^2, u = 0 on walls."""
    xn, yn = grid.node_coords()
    X, Y = np.meshgrid(xn / grid.Lx, yn / grid.Ly, indexing="ij")
    psi = amplitude * (np.sin(np.pi * X) * np.sin(np.pi * Y)) ** 2
    return velocity_from_stream(grid, psi)


def restrict_to_coarse(vec: VectorField, coarse: GridSpec) -> VectorField:
    """Cell-average restriction of a fine staggered field to a coarser grid.

    The fine resolution must be an integer multiple of the coarse one.
    Face values are averaged over the coarse face they cover.
    """
    g = vec.grid
    rx, ry = g.nx // coarse.nx, g.ny // coarse.ny
    if coarse.nx * rx != g.nx or coarse.ny * ry != g.ny:
        raise ValueError("fine grid is not a refinement of the coarse grid")
    out = VectorField(coarse)
    # u: sample the fine columns that coincide with coarse face planes
    u_cols = vec.u[::rx, :]  # (coarse.nx+1, g.ny)
    out.u = u_cols.reshape(coarse.nx + 1, coarse.ny, ry).mean(axis=2)
    v_rows = vec.v[:, ::ry]
    out.v = v_rows.reshape(coarse.nx, rx, coarse.ny + 1).mean(axis=1)
    return out


def restrict_scalar_to_coarse(phi: ScalarField, coarse: GridSpec) -> ScalarField:
    g = phi.grid
    rx, ry = g.nx // coarse.nx, g.ny // coarse.ny
    if coarse.nx * rx != g.nx or coarse.ny * ry != g.ny:
        raise ValueError("fine grid is not a refinement of the coarse grid")
    data = phi.data.reshape(coarse.nx, rx, coarse.ny, ry).mean(axis=(1, 3))
    return ScalarField(coarse, data)
