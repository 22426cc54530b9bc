"""Discrete operators on the MAC grid.

The viscous term is assembled from its quadratic form.  Velocity-gradient
components are evaluated where they are natural on the staggered layout:
d(u_x)/dx and d(u_y)/dy at cell centers, the transverse derivatives at
nodes (with no-slip ghost reflection and half trapezoid weights at wall
nodes, which reproduces the classical MAC stencil).  Assembling stiffness
matrices, affine right-hand sides and averaged stresses from one shared
term list keeps the discrete energy identities exact, which the
diagnostics rely on.

Velocity blocks act componentwise for a 2x2 matrix viscosity A (each
component diffuses with tensor A) and with full component coupling for a
fourth-order effective tensor C.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fields import GridSpec, ScalarField, VectorField, divergence, gradient_to_faces


class SolverFailure(RuntimeError):
    """A linear solve did not reach its tolerance."""

    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


# ----------------------------------------------------------------------
# layouts: degree-of-freedom bookkeeping for one boundary condition
# ----------------------------------------------------------------------


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix(
        (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=shape
    ).tocsr()


class Layout:
    """Sparse extraction matrices for one grid and boundary condition.

    bc is "dirichlet" (no-slip walls, boundary faces eliminated) or
    "periodic" (unit-cell problems).  Unknown ordering is [u-dofs, v-dofs]
    with C-order flattening per component.
    """

    def __init__(self, grid: GridSpec, bc: str):
        if bc not in ("dirichlet", "periodic"):
            raise ValueError("bc must be dirichlet or periodic")
        self.grid = grid
        self.bc = bc
        nx, ny = grid.nx, grid.ny
        self.n_cells = nx * ny
        if bc == "dirichlet":
            self.u_shape = (nx - 1, ny)
            self.v_shape = (nx, ny - 1)
            self.node_shape = (nx + 1, ny + 1)
        else:
            self.u_shape = (nx, ny)
            self.v_shape = (nx, ny)
            self.node_shape = (nx, ny)
        self.n_u = self.u_shape[0] * self.u_shape[1]
        self.n_v = self.v_shape[0] * self.v_shape[1]
        self.n_vel = self.n_u + self.n_v
        self.n_nodes = self.node_shape[0] * self.node_shape[1]
        self._build()

    # -- raw index helpers

    def _uid(self, a, b):
        return a * self.u_shape[1] + b

    def _vid(self, a, b):
        return a * self.v_shape[1] + b

    def _nid(self, a, b):
        return a * self.node_shape[1] + b

    def _cid(self, i, j):
        return i * self.grid.ny + j

    def _build(self):
        g = self.grid
        nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy

        if self.bc == "dirichlet":
            self._build_dirichlet(nx, ny, dx, dy)
        else:
            self._build_periodic(nx, ny, dx, dy)

        # node -> center averaging (4-point mean)
        rows, cols, vals = [], [], []
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        cid = self._cid(ii, jj).ravel()
        for di in (0, 1):
            for dj in (0, 1):
                if self.bc == "dirichlet":
                    nid = self._nid(ii + di, jj + dj).ravel()
                else:
                    nid = self._nid((ii + di) % nx, (jj + dj) % ny).ravel()
                rows.append(cid)
                cols.append(nid)
                vals.append(np.full(cid.size, 0.25))
        self.avg_n2c = _coo(
            np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
            (self.n_cells, self.n_nodes),
        )

        # quadrature weights
        area = g.cell_area
        self.w_cells = np.full(self.n_cells, area)
        wn = np.ones(self.node_shape)
        if self.bc == "dirichlet":
            wn[0, :] *= 0.5
            wn[-1, :] *= 0.5
            wn[:, 0] *= 0.5
            wn[:, -1] *= 0.5
        self.w_nodes = (wn * area).ravel()

        # divergence: cells x velocity dofs
        self.D = sp.hstack([self.E_cc[0], self.E_cc[1]]).tocsr()

    def _build_dirichlet(self, nx, ny, dx, dy):
        # d(u_x)/dx at centers; u dofs are interior vertical faces
        rows, cols, vals = [], [], []
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        cid = self._cid(ii, jj)
        right = ii <= nx - 2  # face i+1 is a dof when i+1 <= nx-1
        rows.append(cid[right].ravel())
        cols.append(self._uid(ii[right], jj[right]).ravel())
        vals.append(np.full(right.sum(), 1.0 / dx))
        left = ii >= 1
        rows.append(cid[left].ravel())
        cols.append(self._uid(ii[left] - 1, jj[left]).ravel())
        vals.append(np.full(left.sum(), -1.0 / dx))
        E11 = _coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                   (self.n_cells, self.n_u))

        # d(u_y)/dy at centers
        rows, cols, vals = [], [], []
        top = jj <= ny - 2
        rows.append(cid[top].ravel())
        cols.append(self._vid(ii[top], jj[top]).ravel())
        vals.append(np.full(top.sum(), 1.0 / dy))
        bot = jj >= 1
        rows.append(cid[bot].ravel())
        cols.append(self._vid(ii[bot], jj[bot] - 1).ravel())
        vals.append(np.full(bot.sum(), -1.0 / dy))
        E22 = _coo(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                   (self.n_cells, self.n_v))

        # d(u_x)/dy at nodes; ghost reflection at j = 0, ny gives 2 u / dy
        rows, cols, vals = [], [], []
        for a in range(1, nx):  # wall columns i = 0, nx carry u_x = 0 identically
            for j in range(0, ny + 1):
                nid = self._nid(a, j)
                if j == 0:
                    rows.append(nid); cols.append(self._uid(a - 1, 0)); vals.append(2.0 / dy)
                elif j == ny:
                    rows.append(nid); cols.append(self._uid(a - 1, ny - 1)); vals.append(-2.0 / dy)
                else:
                    rows.append(nid); cols.append(self._uid(a - 1, j)); vals.append(1.0 / dy)
                    rows.append(nid); cols.append(self._uid(a - 1, j - 1)); vals.append(-1.0 / dy)
        E12 = _coo(rows, cols, vals, (self.n_nodes, self.n_u))

        # d(u_y)/dx at nodes
        rows, cols, vals = [], [], []
        for b in range(1, ny):
            for i in range(0, nx + 1):
                nid = self._nid(i, b)
                if i == 0:
                    rows.append(nid); cols.append(self._vid(0, b - 1)); vals.append(2.0 / dx)
                elif i == nx:
                    rows.append(nid); cols.append(self._vid(nx - 1, b - 1)); vals.append(-2.0 / dx)
                else:
                    rows.append(nid); cols.append(self._vid(i, b - 1)); vals.append(1.0 / dx)
                    rows.append(nid); cols.append(self._vid(i - 1, b - 1)); vals.append(-1.0 / dx)
        E21 = _coo(rows, cols, vals, (self.n_nodes, self.n_v))

        self.E_cc = {0: E11, 1: E22}       # natural center derivative per component
        self.E_nd = {0: E12, 1: E21}       # transverse derivative at nodes

    def _build_periodic(self, nx, ny, dx, dy):
        ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        cid = self._cid(ii, jj).ravel()

        def wrap_pairs(idfun, ia, ja, ib, jb, h):
            rows = np.concatenate([cid, cid])
            cols = np.concatenate([idfun(ia, ja).ravel(), idfun(ib, jb).ravel()])
            vals = np.concatenate([np.full(cid.size, 1.0 / h), np.full(cid.size, -1.0 / h)])
            return rows, cols, vals

        r, c, v = wrap_pairs(self._uid, (ii + 1) % nx, jj, ii, jj, dx)
        E11 = _coo(r, c, v, (self.n_cells, self.n_u))
        r, c, v = wrap_pairs(self._vid, ii, (jj + 1) % ny, ii, jj, dy)
        E22 = _coo(r, c, v, (self.n_cells, self.n_v))

        nid = self._nid(ii, jj).ravel()
        rows = np.concatenate([nid, nid])
        cols = np.concatenate([self._uid(ii, jj).ravel(), self._uid(ii, (jj - 1) % ny).ravel()])
        vals = np.concatenate([np.full(nid.size, 1.0 / dy), np.full(nid.size, -1.0 / dy)])
        E12 = _coo(rows, cols, vals, (self.n_nodes, self.n_u))

        rows = np.concatenate([nid, nid])
        cols = np.concatenate([self._vid(ii, jj).ravel(), self._vid((ii - 1) % nx, jj).ravel()])
        vals = np.concatenate([np.full(nid.size, 1.0 / dx), np.full(nid.size, -1.0 / dx)])
        E21 = _coo(rows, cols, vals, (self.n_nodes, self.n_v))

        self.E_cc = {0: E11, 1: E22}
        self.E_nd = {0: E12, 1: E21}

    # -- extraction lookup used by the form assembler

    def extract(self, comp, deriv, loc):
        """Matrix taking the dofs of ``comp`` to d(u_comp)/d(x_deriv) at ``loc``."""
        natural_center = deriv == comp
        if loc == "n":
            if natural_center:
                raise ValueError("center-natural derivative has no node version")
            return self.E_nd[comp]
        if natural_center:
            return self.E_cc[comp]
        return self.avg_n2c @ self.E_nd[comp]

    def weights(self, loc):
        return self.w_cells if loc == "c" else self.w_nodes

    # -- dof <-> staggered array embedding (dirichlet only)

    def split(self, vel):
        return vel[: self.n_u], vel[self.n_u:]

    def to_vector_field(self, vel) -> VectorField:
        assert self.bc == "dirichlet"
        g = self.grid
        out = VectorField(g)
        udofs, vdofs = self.split(vel)
        out.u[1:-1, :] = udofs.reshape(self.u_shape)
        out.v[:, 1:-1] = vdofs.reshape(self.v_shape)
        return out

    def from_vector_field(self, vec: VectorField):
        assert self.bc == "dirichlet"
        return np.concatenate([vec.u[1:-1, :].ravel(), vec.v[:, 1:-1].ravel()])


# ----------------------------------------------------------------------
# quadratic-form terms
# ----------------------------------------------------------------------


@dataclass
class FormTerm:
    """One contribution <c * d(u_i)/dx_j, d(w_k)/dx_l> at location loc."""

    i: int
    j: int
    k: int
    l: int
    coeff: np.ndarray  # flattened samples at loc
    loc: str


def _pair_location(i, j, k, l):
    nat_ij = "c" if j == i else "n"
    nat_kl = "c" if l == k else "n"
    return "n" if (nat_ij == "n" and nat_kl == "n") else "c"


def matrix_viscosity_terms(layout: Layout, A_centers, A_nodes):
    """Terms of sum_i <A_jl d_j u_i, d_l w_i> for a 2x2 matrix viscosity.

    A_centers, A_nodes: sampled matrices of shape (n, 2, 2) at cell centers
    and nodes (flattened in the layout order).
    """
    terms = []
    for i in (0, 1):
        for j in (0, 1):
            for l in (0, 1):
                loc = _pair_location(i, j, i, l)
                A = A_centers if loc == "c" else A_nodes
                terms.append(FormTerm(i, j, i, l, A[:, j, l], loc))
    return terms


def tensor_viscosity_terms(layout: Layout, C, tol=0.0):
    """Terms of <C[i,j,k,l] d_j u_i, d_l w_k> for a constant fourth-order tensor."""
    C = np.asarray(C, dtype=float)
    terms = []
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                for l in (0, 1):
                    c = C[i, j, k, l]
                    if c == 0.0 and tol == 0.0:
                        continue
                    loc = _pair_location(i, j, k, l)
                    n = layout.n_cells if loc == "c" else layout.n_nodes
                    terms.append(FormTerm(i, j, k, l, np.full(n, c), loc))
    return terms


class VelocityForm:
    """Assembled viscous form: stiffness matrix, affine loads, stress averages."""

    def __init__(self, layout: Layout, terms, assemble=True):
        self.layout = layout
        self.terms = terms
        self._K = self._assemble() if assemble else None

    @property
    def K(self):
        if self._K is None:
            self._K = self._assemble()
        return self._K

    def _extract(self, comp, deriv, loc):
        return self.layout.extract(comp, deriv, loc)

    def _assemble(self):
        lay = self.layout
        K = sp.csr_matrix((lay.n_vel, lay.n_vel))
        offs = {0: 0, 1: lay.n_u}
        sizes = {0: lay.n_u, 1: lay.n_v}
        for t in self.terms:
            Eij = self._extract(t.i, t.j, t.loc)
            Ekl = self._extract(t.k, t.l, t.loc)
            W = sp.diags(lay.weights(t.loc) * t.coeff)
            block = (Eij.T @ W @ Ekl).tocoo()
            K = K + _coo(
                block.row + offs[t.i], block.col + offs[t.k], block.data,
                (lay.n_vel, lay.n_vel),
            )
        return K.tocsr()

    def affine_load(self, xi):
        """Load vector g with g . u = Q(affine xi, u); K chi = -g solves the cell problem."""
        lay = self.layout
        xi = np.asarray(xi, dtype=float)
        g = np.zeros(lay.n_vel)
        offs = {0: 0, 1: lay.n_u}
        for t in self.terms:
            if xi[t.k, t.l] == 0.0:
                continue
            Eij = self._extract(t.i, t.j, t.loc)
            w = lay.weights(t.loc) * t.coeff * xi[t.k, t.l]
            g[offs[t.i]: offs[t.i] + Eij.shape[1]] += Eij.T @ w
        return g

    def average_stress(self, vel, xi=None):
        """Quadrature average of the stress of (xi + grad u), a 2x2 matrix.

        Pairing the stress against constant test gradients keeps the
        effective-tensor assembly exactly consistent with the stiffness
        matrix, hence symmetric as a quadratic form.
        """
        lay = self.layout
        area_total = lay.grid.Lx * lay.grid.Ly
        out = np.zeros((2, 2))
        offs = {0: 0, 1: lay.n_u}
        for t in self.terms:
            Eij = self._extract(t.i, t.j, t.loc)
            grad = Eij @ vel[offs[t.i]: offs[t.i] + Eij.shape[1]]
            if xi is not None:
                grad = grad + xi[t.i, t.j]
            out[t.k, t.l] += np.sum(lay.weights(t.loc) * t.coeff * grad) / area_total
        return out

    def quadratic(self, vel):
        return float(vel @ (self.K @ vel))

    def tensor_force(self, M_cells):
        """Integrated weak divergence of a cell-centered stress tensor field.

        Returns f with f . w = -sum_ij <M_ij, d_j w_i> for all velocities w,
        the discrete counterpart of the force div(M).
        """
        lay = self.layout
        M = M_cells.reshape(lay.n_cells, 2, 2) if M_cells.ndim != 3 else M_cells
        f = np.zeros(lay.n_vel)
        offs = {0: 0, 1: lay.n_u}
        for i in (0, 1):
            for j in (0, 1):
                loc = "c"
                Eij = self._extract(i, j, loc)
                f[offs[i]: offs[i] + Eij.shape[1]] -= Eij.T @ (lay.w_cells * M[:, i, j])
        return f


def sample_matrix_coefficient(layout: Layout, coeff, t, eps=None):
    """Sample a coefficient at the layout's centers and nodes.

    With eps set, samples A(t, x, frac(x/eps)) on the physical grid; with
    eps None the layout grid is read as the unit cell and A(t, x=y, y).
    """
    from .coefficients import sample_coefficient

    g = layout.grid
    xc, yc = g.cell_centers()
    Xc, Yc = np.meshgrid(xc, yc, indexing="ij")
    centers = np.stack([Xc, Yc], axis=-1).reshape(-1, 2)
    if layout.bc == "periodic":
        xn = np.arange(g.nx) * g.dx
        yn = np.arange(g.ny) * g.dy
    else:
        xn, yn = g.node_coords()
    Xn, Yn = np.meshgrid(xn, yn, indexing="ij")
    nodes = np.stack([Xn, Yn], axis=-1).reshape(-1, 2)
    if eps is None:
        Ac = coeff(t, centers, np.mod(centers, 1.0))
        An = coeff(t, nodes, np.mod(nodes, 1.0))
    else:
        Ac = sample_coefficient(coeff, t, centers, eps)
        An = sample_coefficient(coeff, t, nodes, eps)
    return Ac, An


# ----------------------------------------------------------------------
# preconditioned conjugate gradients and fast Poisson preconditioners
# ----------------------------------------------------------------------


def pcg(apply_A, b, precond=None, tol=1e-10, maxiter=None, x0=None):
    """Hand-rolled PCG with fixed-order reductions.

    Returns (x, history).  Raises SolverFailure if the relative residual
    does not reach tol within maxiter iterations.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if maxiter is None:
        maxiter = 10 * n
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - apply_A(x) if x0 is not None else b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), [0.0]
    z = precond(r) if precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / bnorm]
    for _ in range(maxiter):
        if history[-1] <= tol:
            return x, history
        Ap = apply_A(p)
        denom = float(p @ Ap)
        if denom <= 0.0:
            raise SolverFailure("PCG hit a non-positive curvature direction",
                                residual=history[-1], history=history)
        a = rz / denom
        x += a * p
        r -= a * Ap
        history.append(float(np.linalg.norm(r)) / bnorm)
        if history[-1] <= tol:
            return x, history
        z = precond(r) if precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverFailure(
        "PCG did not converge: residual %.3e after %d iterations" % (history[-1], maxiter),
        residual=history[-1], history=history,
    )


class NeumannPoisson:
    """Exact DCT-II inverse of the cell-centered Neumann Laplacian (-div grad)."""

    def __init__(self, grid: GridSpec):
        self.grid = grid
        kx = np.arange(grid.nx)
        ky = np.arange(grid.ny)
        lx = (2.0 - 2.0 * np.cos(np.pi * kx / grid.nx)) / grid.dx**2
        ly = (2.0 - 2.0 * np.cos(np.pi * ky / grid.ny)) / grid.dy**2
        self.eigs = lx[:, None] + ly[None, :]
        self.eigs[0, 0] = 1.0  # zero mode handled separately

    def solve(self, rhs):
        """Zero-mean solution of -div grad phi = rhs (rhs averaged to zero)."""
        h = scipy.fft.dctn(rhs, type=2, norm="ortho")
        h /= self.eigs
        h[0, 0] = 0.0
        return scipy.fft.idctn(h, type=2, norm="ortho")


def project_divergence_free(vec: VectorField, tol=1e-10, maxiter=None):
    """Remove the discrete gradient part of a wall-bounded staggered field.

    Returns (projected field, potential phi with zero mean).  The Poisson
    problem is solved by conjugate gradients preconditioned with the exact
    DCT inverse of the constant-coefficient operator.
    """
    g = vec.grid
    wall = max(np.abs(vec.u[0, :]).max(initial=0.0), np.abs(vec.u[-1, :]).max(initial=0.0),
               np.abs(vec.v[:, 0]).max(initial=0.0), np.abs(vec.v[:, -1]).max(initial=0.0))
    if wall > 1e-13 * (1.0 + vec.max_norm()):
        raise ValueError("projection requires homogeneous boundary faces")
    rhs = -divergence(vec).data
    rhs = rhs - rhs.mean()
    fast = NeumannPoisson(g)

    def apply_A(flat):
        phi = ScalarField(g, flat.reshape(g.nx, g.ny))
        return (-divergence(gradient_to_faces(phi)).data).ravel()

    def precond(flat):
        return fast.solve(flat.reshape(g.nx, g.ny)).ravel()

    sol, _ = pcg(apply_A, rhs.ravel(), precond=precond, tol=tol,
                 maxiter=maxiter or 10 * g.nx * g.ny)
    phi = ScalarField(g, sol.reshape(g.nx, g.ny))
    phi.data -= phi.data.mean()
    grad = gradient_to_faces(phi)
    out = vec.copy()
    out.u -= grad.u
    out.v -= grad.v
    return out, phi


# ----------------------------------------------------------------------
# monolithic generalized-Stokes solves
# ----------------------------------------------------------------------


class SaddleSolver:
    """Direct factorization of a bordered velocity/pressure saddle system.

    Solves   M_scale * u + dt * K u - dt * area * D^T p = rhs
             D u = 0,   mean(p) = 0
    For the stationary cell problem use dt = 1 and M_scale = 0; constant
    velocity null modes are then pinned by two extra mean constraints.
    """

    def __init__(self, layout: Layout, K, dt, mass_scale, pin_velocity_means=False):
        self.layout = layout
        self.dt = dt
        self.mass_scale = mass_scale
        lay = layout
        area = lay.grid.cell_area
        nv, npr = lay.n_vel, lay.n_cells
        A = (sp.identity(nv) * mass_scale + dt * K).tocsr()
        B = (-dt * area * lay.D.T).tocsr()
        ep = np.ones((npr, 1))
        blocks = [
            [A, B, None],
            [lay.D, None, sp.csr_matrix(ep)],
            [None, sp.csr_matrix(area * ep.T), None],
        ]
        if pin_velocity_means:
            cu = np.zeros((nv, 2))
            cu[: lay.n_u, 0] = 1.0
            cu[lay.n_u:, 1] = 1.0
            blocks[0].append(sp.csr_matrix(cu))
            blocks[1].append(None)
            blocks[2].append(None)
            blocks.append([sp.csr_matrix(cu.T), None, None, None])
        S = sp.bmat(blocks, format="csc")
        self.n_extra = S.shape[0] - nv - npr
        self.lu = spla.splu(S)
        self.S = S

    def solve(self, rhs_vel, rhs_div=None):
        lay = self.layout
        rhs = np.zeros(self.S.shape[0])
        rhs[: lay.n_vel] = rhs_vel
        if rhs_div is not None:
            rhs[lay.n_vel: lay.n_vel + lay.n_cells] = rhs_div
        sol = self.lu.solve(rhs)
        res = self.S @ sol - rhs
        scale = max(float(np.linalg.norm(rhs)), 1.0)
        rel = float(np.linalg.norm(res)) / scale
        if not np.isfinite(rel) or rel > 1e-8:
            raise SolverFailure("saddle solve residual %.3e" % rel, residual=rel)
        vel = sol[: lay.n_vel]
        p = sol[lay.n_vel: lay.n_vel + lay.n_cells]
        return vel, p - p.mean()
