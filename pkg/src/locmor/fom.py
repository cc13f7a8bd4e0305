"""Full-order solves: global block system, patch Dirichlet problems, norms."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .forms import AffineBlockOperator, ParamProblem, restrict_problem, theta_eval
from .grid import SIDES, OversamplingPatch, build_grid
from .space import element_load, element_mass, element_stiffness

DIRECT_LIMIT = 20_000


@dataclass(frozen=True)
class FomSolution:
    u: np.ndarray
    mu: np.ndarray
    residual: float


def solve_spd(A, b, tol=1e-10, direct_limit=DIRECT_LIMIT, maxiter=None):
    """Solve an SPD system; direct factorization up to ``direct_limit`` unknowns, Jacobi-PCG beyond."""
    A = sps.csr_matrix(A)
    n = A.shape[0]
    bnorm = float(np.linalg.norm(b))
    if n == 0:
        return np.zeros(0), 0.0
    if bnorm == 0.0:
        return np.zeros(n), 0.0
    if n <= direct_limit:
        x = spla.splu(A.tocsc()).solve(b)
    else:
        d = A.diagonal()
        if np.any(d <= 0):
            raise NumericalError("non-positive diagonal in SPD solve", residual=np.inf)
        P = spla.LinearOperator(A.shape, matvec=lambda r: r / d)
        x, _ = spla.cg(A, b, rtol=tol, atol=0.0, M=P, maxiter=maxiter or 10 * n)
    res = float(np.linalg.norm(b - A @ x)) / bnorm
    # direct solves are accepted up to round-off growth on ill-conditioned systems
    limit = max(tol, 1e-8) if n <= direct_limit else 10 * tol
    if not np.isfinite(res) or res > limit:
        raise NumericalError(f"linear solver did not converge, relative residual {res:.3e}", residual=res)
    return x, res


def solve_fom(op: AffineBlockOperator, mu, rhs=None, tol=1e-10, direct_limit=DIRECT_LIMIT):
    mu = op.problem.check_param(mu)
    f = op.rhs_vector(mu) if rhs is None else np.asarray(rhs, float)
    u, res = solve_spd(op.assemble(mu), f, tol, direct_limit)
    return FomSolution(u, mu, res)


def energy_norm(op: AffineBlockOperator, u, mu):
    return float(np.sqrt(max(u @ (op.assemble(mu) @ u), 0.0)))


def dual_norm(f, product):
    """sqrt(f^T M^-1 f) for an SPD product ``M`` (sparse or dense)."""
    f = np.asarray(f, float)
    if sps.issparse(product):
        x = spla.splu(sps.csc_matrix(product)).solve(f)
    else:
        x = np.linalg.solve(product, f)
    if not np.all(np.isfinite(x)):
        raise NumericalError("singular product in dual norm", residual=np.inf)
    return float(np.sqrt(max(f @ x, 0.0)))


def side_nodes(nx, ny, side):
    """Node indices of a rectangular nx x ny grid lying on ``side``."""
    i, j = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    i, j = i.ravel(), j.ravel()
    hit = {"left": i == 0, "right": i == nx, "bottom": j == 0, "top": j == ny}[side]
    return np.flatnonzero(hit)


def boundary_mass_1d(h):
    return h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])


class PatchSystem:
    """Conforming Q1 discretization on an oversampling patch with strong
    Dirichlet data: prescribed values on the interior patch boundary and zero
    on the Dirichlet part of the domain boundary."""

    def __init__(self, patch: OversamplingPatch, problem: ParamProblem):
        self.patch = patch
        self.problem = problem
        dd = patch.dd
        g = dd.grid
        x0 = g.domain[0] + patch.cell_offset[0] * g.hx
        y0 = g.domain[2] + patch.cell_offset[1] * g.hy
        self.grid = build_grid((x0, x0 + patch.nx * g.hx, y0, y0 + patch.ny * g.hy), patch.nx, patch.ny)
        self.local_problem = restrict_problem(problem, patch.cells, self.grid, ())
        nx, ny = patch.nx, patch.ny
        outer = [s for s in SIDES if s not in patch.outer_sides]
        dirichlet = [s for s in patch.outer_sides if s in problem.dirichlet_sides]
        self.dirichlet_nodes = np.unique(np.concatenate([side_nodes(nx, ny, s) for s in dirichlet] or [[]])).astype(int)
        gamma = np.unique(np.concatenate([side_nodes(nx, ny, s) for s in outer] or [[]])).astype(int)
        self.source_nodes = np.setdiff1d(gamma, self.dirichlet_nodes)
        fixed = np.union1d(self.source_nodes, self.dirichlet_nodes)
        self.free_nodes = np.setdiff1d(np.arange(self.grid.num_nodes), fixed)
        self._outer_sides = outer
        self._factors = {}

    @property
    def num_nodes(self):
        return self.grid.num_nodes

    def _assemble_cells(self, local, weights, cells=None):
        gp = self.grid
        cn = gp.cell_nodes if cells is None else gp.cell_nodes[cells]
        w = np.asarray(weights, float)
        vals = w[:, None, None] * local[None]
        rows = np.broadcast_to(cn[:, :, None], vals.shape).ravel()
        cols = np.broadcast_to(cn[:, None, :], vals.shape).ravel()
        return sps.csr_matrix((vals.ravel(), (rows, cols)), shape=(gp.num_nodes,) * 2)

    @cached_property
    def stiffness_terms(self):
        gp = self.grid
        K = element_stiffness(gp.hx, gp.hy)
        return [self._assemble_cells(K, kq) for kq in self.local_problem.kappas]

    @cached_property
    def mass(self):
        gp = self.grid
        return self._assemble_cells(element_mass(gp.hx, gp.hy), np.ones(gp.num_cells))

    @cached_property
    def load(self):
        gp = self.grid
        f = np.zeros(gp.num_nodes)
        vals = np.asarray(self.local_problem.source, float)[:, None] * element_load(gp.hx, gp.hy)[None]
        np.add.at(f, gp.cell_nodes.ravel(), vals.ravel())
        return f

    def operator(self, mu):
        th = theta_eval(self.problem, mu)
        A = th[0] * self.stiffness_terms[0]
        for t, K in zip(th[1:], self.stiffness_terms[1:]):
            A = A + t * K
        return A.tocsr()

    def _factor(self, mu):
        key = tuple(np.atleast_1d(np.asarray(mu, float)).tolist())
        if key not in self._factors:
            A = self.operator(mu)
            Aff = A[self.free_nodes][:, self.free_nodes].tocsc()
            Afs = A[self.free_nodes][:, self.source_nodes]
            lu = spla.splu(Aff) if Aff.shape[0] else None
            if len(self._factors) > 8:
                self._factors.clear()
            self._factors[key] = (lu, Afs)
        return self._factors[key]

    def solve(self, mu, g=None, with_rhs=False):
        """Patch nodal solution(s) for source data ``g`` (N_S or N_S x k)."""
        lu, Afs = self._factor(mu)
        if g is None:
            g = np.zeros(len(self.source_nodes))
        g = np.asarray(g, float)
        vec = g.ndim == 1
        G = g[:, None] if vec else g
        if G.shape[0] != len(self.source_nodes):
            raise ConfigurationError(f"boundary data has {G.shape[0]} entries, expected {len(self.source_nodes)}")
        rhs = -(Afs @ G)
        if with_rhs:
            rhs = rhs + self.load[self.free_nodes][:, None]
        U = np.zeros((self.num_nodes, G.shape[1]))
        U[self.source_nodes] = G
        if lu is not None and len(self.free_nodes):
            U[self.free_nodes] = lu.solve(np.asarray(rhs))
        return U[:, 0] if vec else U

    @cached_property
    def source_mass(self):
        """L2 mass of traces on the interior patch boundary, restricted to source nodes."""
        gp = self.grid
        n = gp.num_nodes
        rows, cols, vals = [], [], []
        for side in self._outer_sides:
            nodes = side_nodes(gp.nx, gp.ny, side)
            h = gp.hy if side in ("left", "right") else gp.hx
            Me = boundary_mass_1d(h)
            for a, b in zip(nodes[:-1], nodes[1:]):
                for r, i in enumerate((a, b)):
                    for c, j in enumerate((a, b)):
                        rows.append(i)
                        cols.append(j)
                        vals.append(Me[r, c])
        M = sps.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return M[self.source_nodes][:, self.source_nodes].tocsr()

    def patch_cells_of(self, m):
        """Patch-local cell indices of subdomain m (subdomain-lexicographic)."""
        dd = self.patch.dd
        I, J = dd.subdomain_ij(m)
        i0 = I * dd.sub_nx - self.patch.cell_offset[0]
        j0 = J * dd.sub_ny - self.patch.cell_offset[1]
        jj, ii = np.meshgrid(np.arange(j0, j0 + dd.sub_ny), np.arange(i0, i0 + dd.sub_nx), indexing="ij")
        return (jj * self.patch.nx + ii).ravel()

    def patch_nodes_of(self, m):
        """Patch-local node indices of subdomain m (subdomain-lexicographic)."""
        dd = self.patch.dd
        I, J = dd.subdomain_ij(m)
        i0 = I * dd.sub_nx - self.patch.cell_offset[0]
        j0 = J * dd.sub_ny - self.patch.cell_offset[1]
        jj, ii = np.meshgrid(np.arange(j0, j0 + dd.sub_ny + 1), np.arange(i0, i0 + dd.sub_nx + 1), indexing="ij")
        return (jj * (self.patch.nx + 1) + ii).ravel()


def solve_patch_dirichlet(system: PatchSystem, mu, g, with_rhs=False):
    return system.solve(mu, g, with_rhs)


def l2_error(space, u, exact, order=3):
    """L2 distance between a block vector and a function, by tensor Gauss quadrature."""
    from .space import q1_values
    g = space.grid
    p, w = np.polynomial.legendre.leggauss(order)
    p, w = (p + 1) / 2, w / 2
    xi, eta = (a.ravel() for a in np.meshgrid(p, p, indexing="ij"))
    wq = np.outer(w, w).ravel()
    vals = np.asarray(u)[space.cell_dofs] @ q1_values(xi, eta).T
    x0 = g.node_coords[g.cell_nodes[:, 0]]
    X, Y = x0[:, :1] + xi * g.hx, x0[:, 1:] + eta * g.hy
    return float(np.sqrt(g.cell_area * ((vals - exact(X, Y)) ** 2 * wq).sum()))
