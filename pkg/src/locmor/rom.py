"""Block-sparse Galerkin reduced models on localized bases."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .forms import AffineBlockOperator
from .linalg import gram_schmidt, gram_schmidt_vector
from .space import BlockSpace, local_product_blocks

DENSE_SOLVE_LIMIT = 3000


@dataclass
class ReducedBasis:
    """Per-subdomain basis columns, orthonormal in the local products."""
    space: BlockSpace
    products: list
    blocks: list

    @property
    def sizes(self):
        return np.array([b.shape[1] for b in self.blocks])

    @property
    def total(self):
        return int(self.sizes.sum())

    def copy(self):
        return ReducedBasis(self.space, self.products, [b.copy() for b in self.blocks])

    def orthonormality_error(self):
        errs = [0.0]
        for P, B in zip(self.products, self.blocks):
            if B.shape[1]:
                errs.append(float(np.abs(B.T @ (P @ B) - np.eye(B.shape[1])).max()))
        return max(errs)

    def global_matrix(self):
        """Sparse block-diagonal matrix mapping reduced to FOM coefficients."""
        return sps.block_diag([sps.csr_matrix(b) if b.shape[1] else sps.csr_matrix((b.shape[0], 0))
                               for b in self.blocks], format="csr")


def empty_basis(space: BlockSpace, products=None):
    products = local_product_blocks(space) if products is None else products
    return ReducedBasis(space, products, [np.zeros((ls.dim, 0)) for ls in space.locals])


def basis_from_vectors(space: BlockSpace, vectors, products=None):
    """Orthonormalize per-subdomain candidate columns (list of local arrays)."""
    products = local_product_blocks(space) if products is None else products
    blocks = []
    for P, V in zip(products, vectors):
        V = np.asarray(V, float).reshape(P.shape[0], -1)
        B, _ = gram_schmidt(V, P)
        blocks.append(B)
    return ReducedBasis(space, products, blocks)


def full_basis(space: BlockSpace, products=None):
    """Complete local bases (V_N = V_h), via Cholesky of each local product."""
    products = local_product_blocks(space) if products is None else products
    blocks = []
    for P in products:
        try:
            L = np.linalg.cholesky(P.toarray())
        except np.linalg.LinAlgError as exc:
            raise NumericalError("local product is not positive definite") from exc
        blocks.append(sla.solve_triangular(L.T, np.eye(P.shape[0]), lower=False))
    return ReducedBasis(space, products, blocks)


def coarse_basis(space: BlockSpace, products=None):
    """Bilinear functions 1, x, y, xy per subdomain."""
    g = space.grid
    vecs = []
    for m, ls in enumerate(space.locals):
        x0, x1, y0, y1 = space.dd.subdomain_box(m)
        nodes = g.node_coords[space.subdomain_nodes(m)]
        x = (nodes[:, 0] - x0) / (x1 - x0)
        y = (nodes[:, 1] - y0) / (y1 - y0)
        cols = np.column_stack([np.ones_like(x), x, y, x * y])
        vecs.append(ls.nodal_to_local @ cols)
    return basis_from_vectors(space, vecs, products)


def constant_basis(space: BlockSpace, products=None):
    return basis_from_vectors(space, [np.ones((ls.dim, 1)) for ls in space.locals], products)


def _pairs(space: BlockSpace):
    dd = space.dd
    out = []
    for m in range(dd.num_subdomains):
        out.append((m, m))
        out.extend((m, n) for n in dd.neighbors[m])
    return out


@dataclass
class ReducedModel:
    op: AffineBlockOperator
    basis: ReducedBasis
    blocks: list  # per term: {(m, n): dense block}
    rhs: list  # per rhs term: [per subdomain vector]
    timings: dict = field(default_factory=dict)

    @property
    def space(self):
        return self.op.space

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.basis.sizes)])

    @property
    def dim(self):
        return self.basis.total

    def matrix(self, mu):
        c = self.op.coefficients(mu)
        n_sub = self.space.num_blocks
        grid = [[None] * n_sub for _ in range(n_sub)]
        sizes = self.basis.sizes
        for (m, n) in self.blocks[0]:
            grid[m][n] = sum(cq * bq[(m, n)] for cq, bq in zip(c, self.blocks))
        for m in range(n_sub):
            if grid[m][m] is None:
                grid[m][m] = np.zeros((sizes[m], sizes[m]))
        return grid

    def dense_matrix(self, mu):
        grid = self.matrix(mu)
        off = self.offsets
        A = np.zeros((self.dim, self.dim))
        for m, row in enumerate(grid):
            for n, blk in enumerate(row):
                if blk is not None and blk.size:
                    A[off[m]:off[m + 1], off[n]:off[n + 1]] = blk
        return A

    def sparse_matrix(self, mu):
        grid = self.matrix(mu)
        sizes = self.basis.sizes
        rows = []
        for m, row in enumerate(grid):
            rows.append([sps.csr_matrix(b) if b is not None else None for b in row])
        # empty blocks need explicit shapes for bmat
        for m in range(len(rows)):
            rows[m][m] = sps.csr_matrix(grid[m][m]) if grid[m][m].size else sps.csr_matrix((sizes[m], sizes[m]))
        return sps.bmat(rows, format="csc")

    def rhs_vector(self, mu=None):
        return np.concatenate([sum(r[m] for r in self.rhs) for m in range(self.space.num_blocks)])


def _project_block(op, basis, q, m, n):
    A = op.block(q, m, n)
    return basis.blocks[m].T @ (A @ basis.blocks[n])


def project(op: AffineBlockOperator, basis: ReducedBasis) -> ReducedModel:
    pairs = _pairs(op.space)
    blocks = [{(m, n): _project_block(op, basis, q, m, n) for (m, n) in pairs} for q in range(op.num_terms)]
    rhs = [[basis.blocks[m].T @ f[op.space.block_slice(m)] for m in range(op.space.num_blocks)] for f in op.rhs]
    return ReducedModel(op, basis, blocks, rhs)


def solve_rom(model: ReducedModel, mu, dense_limit=DENSE_SOLVE_LIMIT):
    mu = model.op.problem.check_param(mu)
    f = model.rhs_vector(mu)
    if model.dim == 0:
        return np.zeros(0)
    if not np.any(f):
        return np.zeros(model.dim)
    if model.dim <= dense_limit:
        A = model.dense_matrix(mu)
        try:
            u = sla.solve(A, f, assume_a="sym")
        except (sla.LinAlgError, ValueError) as exc:
            raise NumericalError("singular reduced system") from exc
    else:
        A = model.sparse_matrix(mu)
        try:
            u = spla.splu(A).solve(f)
        except RuntimeError as exc:
            raise NumericalError("singular reduced system") from exc
    res = np.linalg.norm(f - A @ u) / np.linalg.norm(f)
    if not np.isfinite(res) or res > 1e-8:
        raise NumericalError(f"reduced solve residual {res:.3e}", residual=res)
    return u


def reconstruct(basis: ReducedBasis, coeffs):
    coeffs = np.asarray(coeffs, float)
    out = np.zeros(basis.space.dim)
    off = 0
    for m, B in enumerate(basis.blocks):
        k = B.shape[1]
        out[basis.space.block_slice(m)] = B @ coeffs[off:off + k]
        off += k
    return out


def extend_basis(model: ReducedModel, m, vector):
    """Add one local function to subdomain m; only blocks touching m are recomputed.

    Returns True when accepted, False when rejected as dependent (state unchanged).
    """
    basis = model.basis
    w = gram_schmidt_vector(basis.blocks[m], np.asarray(vector, float), basis.products[m])
    if w is None:
        return False
    basis.blocks[m] = np.column_stack([basis.blocks[m], w])
    op = model.op
    dd = op.space.dd
    touched = [(m, m)] + [(m, n) for n in dd.neighbors[m]] + [(n, m) for n in dd.neighbors[m]]
    for q, bq in enumerate(model.blocks):
        for (a, b) in touched:
            bq[(a, b)] = _project_block(op, basis, q, a, b)
    for r, f in zip(model.rhs, op.rhs):
        r[m] = basis.blocks[m].T @ f[op.space.block_slice(m)]
    return True


def insert_snapshots(model: ReducedModel, u):
    """Add the subdomain restrictions of a FOM vector to every local basis."""
    return [extend_basis(model, m, model.space.restrict(m, u)) for m in range(model.space.num_blocks)]


def orthogonal_projection(basis: ReducedBasis, u, product):
    """Product-orthogonal projection of a FOM vector onto span of the reduced basis."""
    V = basis.global_matrix()
    G = (V.T @ (product @ V)).toarray()
    rhs = V.T @ (product @ u)
    if G.shape[0] == 0:
        return np.zeros_like(u)
    return V @ np.linalg.solve(G, rhs)


def export_text(model: ReducedModel, path):
    """Write the reduced model as CSV sections with a header manifest."""
    path = Path(path)
    lines = ["# reduced model", f"terms = {len(model.blocks)}",
             f"subdomains = {model.space.num_blocks}",
             "sizes = " + ",".join(str(int(s)) for s in model.basis.sizes)]
    for q, bq in enumerate(model.blocks):
        for (m, n) in sorted(bq):
            blk = bq[(m, n)]
            lines.append(f"[matrix q={q} m={m} n={n} rows={blk.shape[0]} cols={blk.shape[1]}]")
            lines.extend(",".join(f"{v:.17g}" for v in row) for row in blk)
    for q, r in enumerate(model.rhs):
        for m, vec in enumerate(r):
            lines.append(f"[rhs q={q} m={m} rows={vec.size}]")
            lines.extend(f"{v:.17g}" for v in vec)
    path.write_text("\n".join(lines) + "\n")
    return path
