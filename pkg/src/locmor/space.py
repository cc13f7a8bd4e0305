"""Per-subdomain bilinear (Q1) spaces, block DoF maps and inner products."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from .errors import ConfigurationError
from .grid import SIDES, DomainDecomposition

GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))

# reference corner coordinates, same order as FineGrid.cell_nodes
_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def q1_values(xi, eta):
    """Shape function values at reference points; returns (..., 4)."""
    xi, eta = np.asarray(xi, float), np.asarray(eta, float)
    fx = np.stack([1 - xi, xi, 1 - xi, xi], axis=-1)
    fy = np.stack([1 - eta, 1 - eta, eta, eta], axis=-1)
    return fx * fy


def q1_gradients(xi, eta, hx, hy):
    """Physical shape function gradients at reference points; returns (..., 4, 2)."""
    xi, eta = np.asarray(xi, float), np.asarray(eta, float)
    dx = np.stack([-(1 - eta), 1 - eta, -eta, eta], axis=-1) / hx
    dy = np.stack([-(1 - xi), -xi, 1 - xi, xi], axis=-1) / hy
    return np.stack([dx, dy], axis=-1)


def _tensor_gauss():
    p, w = GAUSS2
    xi, eta = np.meshgrid(p, p, indexing="ij")
    return xi.ravel(), eta.ravel(), np.outer(w, w).ravel()


def element_mass(hx, hy):
    xi, eta, w = _tensor_gauss()
    phi = q1_values(xi, eta)
    return hx * hy * np.einsum("g,gi,gj->ij", w, phi, phi)


def element_stiffness(hx, hy):
    xi, eta, w = _tensor_gauss()
    grad = q1_gradients(xi, eta, hx, hy)
    return hx * hy * np.einsum("g,gid,gjd->ij", w, grad, grad)


def element_load(hx, hy):
    return np.full(4, hx * hy / 4.0)


@dataclass(frozen=True)
class FaceData:
    """Face integrals for the two cells adjacent to a face.

    ``jump`` and ``normal_grad`` are tabulated at the face Gauss points for the
    8 DoFs ``[t+ corners, t- corners]`` (boundary faces: 4 DoFs of t+).
    """
    jump: np.ndarray  # (ng, ndof)
    grad_plus: np.ndarray  # (ng, ndof), grad(phi).n from t+ side, zero for t- dofs
    grad_minus: np.ndarray
    weights: np.ndarray
    length: float

    def penalty(self):
        """Matrix of the integral of h^-1 [u][v] over the face."""
        return np.einsum("g,gi,gj->ij", self.weights, self.jump, self.jump)

    def consistency(self):
        """Matrices C+, C- with a^c(u, v) = kappa+ C+[v, u] + kappa- C-[v, u]."""
        scale = 1.0 if self.grad_minus is None else 0.5
        cp = -self.length * scale * np.einsum("g,gi,gj->ij", self.weights, self.grad_plus, self.jump)
        if self.grad_minus is None:
            return cp, None
        cm = -self.length * scale * np.einsum("g,gi,gj->ij", self.weights, self.grad_minus, self.jump)
        return cp, cm


def face_data(hx, hy, axis, boundary_side=None) -> FaceData:
    """Tabulate a face with normal along ``axis``.

    Interior faces: t+ is the left/lower cell and the normal is +e_axis.
    Boundary faces: ``boundary_side`` in SIDES, outward normal.
    """
    p, w = GAUSS2
    length = hy if axis == 0 else hx
    if boundary_side is None:
        if axis == 0:
            lp, lm = (np.ones_like(p), p), (np.zeros_like(p), p)
        else:
            lp, lm = (p, np.ones_like(p)), (p, np.zeros_like(p))
        n = np.eye(2)[axis]
        vp, vm = q1_values(*lp), q1_values(*lm)
        gp = q1_gradients(*lp, hx, hy) @ n
        gm = q1_gradients(*lm, hx, hy) @ n
        z = np.zeros_like(vp)
        return FaceData(np.hstack([vp, -vm]), np.hstack([gp, z]), np.hstack([z, gm]), w, length)
    side = SIDES.index(boundary_side)
    loc = [(np.zeros_like(p), p), (np.ones_like(p), p), (p, np.zeros_like(p)), (p, np.ones_like(p))][side]
    n = [np.array([-1.0, 0]), np.array([1.0, 0]), np.array([0, -1.0]), np.array([0, 1.0])][side]
    return FaceData(q1_values(*loc), q1_gradients(*loc, hx, hy) @ n, None, w, length)


@dataclass(frozen=True, eq=False)
class LocalSpace:
    kind: str
    subdomain: int
    nx: int  # subdomain cell counts
    ny: int

    @property
    def order(self):
        return 1

    @property
    def dim(self):
        if self.kind == "CG":
            return (self.nx + 1) * (self.ny + 1)
        return 4 * self.nx * self.ny

    @cached_property
    def cell_dofs(self):
        """Local DoF indices per local cell (cells in subdomain-lexicographic order)."""
        c = np.arange(self.nx * self.ny)
        if self.kind == "DG":
            return 4 * c[:, None] + np.arange(4)[None, :]
        i, j = c % self.nx, c // self.nx
        n0 = j * (self.nx + 1) + i
        return np.stack([n0, n0 + 1, n0 + self.nx + 1, n0 + self.nx + 2], axis=1)

    @cached_property
    def nodal_to_local(self):
        """Sparse map from subdomain nodal values (Q1 conforming) to local DoFs."""
        nn = (self.nx + 1) * (self.ny + 1)
        if self.kind == "CG":
            return sps.identity(nn, format="csr")
        c = np.arange(self.nx * self.ny)
        i, j = c % self.nx, c // self.nx
        n0 = j * (self.nx + 1) + i
        nodes = np.stack([n0, n0 + 1, n0 + self.nx + 1, n0 + self.nx + 2], axis=1)
        return sps.csr_matrix((np.ones(self.dim), (np.arange(self.dim), nodes.ravel())), shape=(self.dim, nn))


@dataclass(frozen=True, eq=False)
class BlockSpace:
    dd: DomainDecomposition
    kind: str
    locals: tuple

    @property
    def grid(self):
        return self.dd.grid

    @property
    def num_blocks(self):
        return len(self.locals)

    @cached_property
    def offsets(self):
        return np.concatenate([[0], np.cumsum([s.dim for s in self.locals])])

    @property
    def dim(self):
        return int(self.offsets[-1])

    def block_slice(self, m):
        return slice(int(self.offsets[m]), int(self.offsets[m + 1]))

    @cached_property
    def cell_dofs(self):
        """Global DoF indices (num_cells, 4) of the corners of every fine cell."""
        out = np.empty((self.grid.num_cells, 4), dtype=int)
        for m, cells in enumerate(self.dd.subdomain_cells):
            out[cells] = self.locals[m].cell_dofs + self.offsets[m]
        return out

    @cached_property
    def dof_subdomain(self):
        return np.repeat(np.arange(self.num_blocks), np.diff(self.offsets))

    def subdomain_nodes(self, m):
        """Global grid node indices of subdomain m, subdomain-lexicographic."""
        I, J = self.dd.subdomain_ij(m)
        nx, ny = self.dd.sub_nx, self.dd.sub_ny
        jj, ii = np.meshgrid(np.arange(J * ny, (J + 1) * ny + 1), np.arange(I * nx, (I + 1) * nx + 1), indexing="ij")
        return (jj * (self.grid.nx + 1) + ii).ravel()

    def extend(self, m, local):
        """Extend a local vector on block m by zero."""
        out = np.zeros(self.dim)
        out[self.block_slice(m)] = local
        return out

    def restrict(self, m, vector):
        return np.asarray(vector)[self.block_slice(m)]

    def broken_values(self, vector):
        """Corner values (num_cells, 4) of a block vector."""
        return np.asarray(vector)[self.cell_dofs]

    def from_nodal(self, nodal):
        """Interpolate a global Q1 nodal vector into the block space."""
        nodal = np.asarray(nodal, float)
        out = np.empty(self.dim)
        for m, ls in enumerate(self.locals):
            out[self.block_slice(m)] = ls.nodal_to_local @ nodal[self.subdomain_nodes(m)]
        return out

    def interpolate(self, func):
        return self.from_nodal(func(self.grid.node_coords[:, 0], self.grid.node_coords[:, 1]))


def build_block_space(dd: DomainDecomposition, kind="CG") -> BlockSpace:
    kind = kind.upper()
    if kind not in ("CG", "DG"):
        raise ConfigurationError(f"unknown space kind {kind!r}")
    locals_ = tuple(LocalSpace(kind, m, dd.sub_nx, dd.sub_ny) for m in range(dd.num_subdomains))
    return BlockSpace(dd, kind, locals_)


def evaluate(space: BlockSpace, coefficients, point):
    """Value and broken gradient of a block vector at a point."""
    g = space.grid
    cell, (xi, eta) = g.locate(point)
    vals = np.asarray(coefficients)[space.cell_dofs[cell]]
    return float(q1_values(xi, eta) @ vals), q1_gradients(xi, eta, g.hx, g.hy).T @ vals


def coupled_faces(space: BlockSpace, dirichlet_sides=SIDES):
    """Faces carrying interior-penalty terms: interfaces, Dirichlet boundary
    faces, and for DG spaces every interior face."""
    dd, g = space.dd, space.grid
    kind = dd.face_kind
    mask = kind == 1
    if space.kind == "DG":
        mask |= kind == 0
    sides = [SIDES.index(s) for s in dirichlet_sides]
    mask |= (kind == 2) & np.isin(g.face_side, sides)
    return mask


def _coo(rows, cols, vals, n):
    return sps.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def assemble_cell_matrix(space: BlockSpace, local_matrix, cell_weights=None):
    dofs = space.cell_dofs
    w = np.ones(len(dofs)) if cell_weights is None else np.asarray(cell_weights, float)
    vals = w[:, None, None] * local_matrix[None]
    rows = np.broadcast_to(dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(dofs[:, None, :], vals.shape)
    return _coo(rows, cols, vals, space.dim)


def face_dofs(space: BlockSpace, faces):
    g = space.grid
    plus = space.cell_dofs[g.face_plus[faces]]
    minus_cells = g.face_minus[faces]
    if np.all(minus_cells >= 0):
        return np.hstack([plus, space.cell_dofs[minus_cells]])
    return plus


def face_groups(space: BlockSpace, mask):
    """Split selected faces into geometric groups sharing one FaceData."""
    g = space.grid
    out = []
    for axis in (0, 1):
        sel = np.flatnonzero(mask & (g.face_axis == axis) & ~g.is_boundary_face)
        if sel.size:
            out.append((sel, face_data(g.hx, g.hy, axis)))
    for s, side in enumerate(SIDES):
        sel = np.flatnonzero(mask & (g.face_side == s))
        if sel.size:
            out.append((sel, face_data(g.hx, g.hy, 0 if s < 2 else 1, side)))
    return out


def assemble_face_matrix(space, faces, local_matrix, face_weights=None):
    dofs = face_dofs(space, faces)
    w = np.ones(len(faces)) if face_weights is None else np.asarray(face_weights, float)
    vals = w[:, None, None] * local_matrix[None]
    rows = np.broadcast_to(dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(dofs[:, None, :], vals.shape)
    return _coo(rows, cols, vals, space.dim)


def assemble_penalty(space, mask, face_weights=None):
    """Sum over masked faces of weight * integral of h^-1 [u][v]."""
    out = sps.csr_matrix((space.dim, space.dim))
    w_all = np.ones(space.grid.num_faces) if face_weights is None else np.asarray(face_weights, float)
    for faces, fd in face_groups(space, mask):
        out = out + assemble_face_matrix(space, faces, fd.penalty(), w_all[faces])
    return out


def assemble_product(space: BlockSpace, kind="vh", *, operator=None, mu=None,
                     dirichlet_sides=SIDES, interface_penalty_scale=1.0):
    """Inner product matrix on the block space.

    kind: ``"vh"`` broken H1 seminorm plus unweighted jump penalties on all
    coupled faces, ``"l2"`` mass, ``"h1semi"`` broken gradient only, or
    ``"energy"`` for the operator assembled at ``mu``.
    """
    g = space.grid
    kind = kind.lower()
    if kind == "l2":
        return assemble_cell_matrix(space, element_mass(g.hx, g.hy))
    if kind == "h1semi":
        return assemble_cell_matrix(space, element_stiffness(g.hx, g.hy))
    if kind == "vh":
        prod = assemble_cell_matrix(space, element_stiffness(g.hx, g.hy))
        mask = coupled_faces(space, dirichlet_sides)
        w = np.ones(g.num_faces)
        w[space.dd.face_kind == 1] = interface_penalty_scale
        return (prod + assemble_penalty(space, mask, w)).tocsr()
    if kind == "energy":
        if operator is None or mu is None:
            raise ConfigurationError("energy product needs an operator and a parameter")
        return operator.assemble(mu)
    raise ConfigurationError(f"unknown product {kind!r}")


def local_product_blocks(space: BlockSpace, dirichlet_sides=SIDES):
    """Per-subdomain products: V_h restriction with interface penalties split half-half."""
    full = assemble_product(space, "vh", dirichlet_sides=dirichlet_sides, interface_penalty_scale=0.5)
    return [full[space.block_slice(m), space.block_slice(m)].tocsr() for m in range(space.num_blocks)]
