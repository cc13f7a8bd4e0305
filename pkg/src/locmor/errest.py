"""Localized a posteriori error estimation: residual-based and flux-reconstruction-based."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, PreconditionError, ResourceError
from .fom import solve_fom
from .forms import AffineBlockOperator, ParamProblem, assemble_affine_fom, theta_bounds, theta_eval
from .grid import SIDES, build_grid, decompose
from .linalg import dense, generalized_eigh
from .space import (BlockSpace, GAUSS2, assemble_product, build_block_space, element_stiffness, face_data,
                    q1_gradients, q1_values)

POINCARE = 1.0 / np.pi ** 2
ORACLE_CAP = 2000

__all__ = [
    "ErrorReport", "vh_product", "residual_vector", "conservation_defect", "RTField", "global_residual_estimate", "localized_residual_estimate",
    "stability_constant_oracle", "coercivity_oracle", "alpha_min_theta", "oswald_interpolate",
    "flux_reconstruct", "flux_estimate", "theta_bounds", "ResidualOnline",
    "refine_problem", "prolongate", "reference_energy_error",
]


@dataclass
class ErrorReport:
    estimate: float
    indicators: np.ndarray
    kind: str
    constants: dict = field(default_factory=dict)
    parts: dict = field(default_factory=dict)


def vh_product(op: AffineBlockOperator):
    return assemble_product(op.space, "vh", dirichlet_sides=op.problem.dirichlet_sides)


def residual_vector(op: AffineBlockOperator, u, mu):
    return op.rhs_vector(mu) - op.assemble(mu) @ u


def coercivity_oracle(op: AffineBlockOperator, mu, product=None, cap=ORACLE_CAP):
    """(alpha, gamma): extreme generalized eigenvalues of A(mu) against the product."""
    if op.space.dim > cap:
        raise ResourceError(f"dense oracle limited to {cap} DoFs")
    M = vh_product(op) if product is None else product
    w, _ = generalized_eigh(op.assemble(mu), M)
    return float(w[-1]), float(w[0])


def alpha_min_theta(op: AffineBlockOperator, mu, alpha_ref, mu_ref):
    """Heuristic lower bound min_q theta_q(mu)/theta_q(mu_ref) * alpha(mu_ref)."""
    lo, _ = theta_bounds(op.problem, mu, mu_ref)
    return lo * alpha_ref


def _local_solvers(op, product):
    s = op.space
    return [spla.splu(sps.csc_matrix(product[s.block_slice(m), s.block_slice(m)]))
            for m in range(s.num_blocks)]


def local_dual_norms(op, r, product, solvers=None):
    s = op.space
    solvers = _local_solvers(op, product) if solvers is None else solvers
    out = np.empty(s.num_blocks)
    for m, lu in enumerate(solvers):
        rm = r[s.block_slice(m)]
        out[m] = np.sqrt(max(rm @ lu.solve(rm), 0.0))
    return out


def global_residual_estimate(op: AffineBlockOperator, u, mu, alpha, product=None):
    if not alpha > 0:
        raise ConfigurationError("coercivity constant must be positive")
    M = vh_product(op) if product is None else product
    r = residual_vector(op, u, mu)
    dn = float(np.sqrt(max(r @ spla.splu(sps.csc_matrix(M)).solve(r), 0.0)))
    return dn / alpha


def localized_residual_estimate(op: AffineBlockOperator, u, mu, alpha, c_N=None, product=None):
    """Indicators are local dual norms of the residual; estimate c_N / alpha * sqrt(sum eta^2)."""
    M = vh_product(op) if product is None else product
    eta = local_dual_norms(op, residual_vector(op, u, mu), M)
    agg = float(np.sqrt((eta ** 2).sum()))
    consts = {"alpha": alpha, "J": 2}
    if c_N is None:
        consts["scaled"] = False
        return ErrorReport(agg, eta, "residual-local", consts)
    consts.update(c_N=c_N, scaled=True)
    return ErrorReport(c_N / alpha * agg, eta, "residual-local", consts)


def stability_constant_oracle(space: BlockSpace, basis_blocks, product=None, cap=ORACLE_CAP):
    """c_N^2 = largest eigenvalue of blockdiag(Q_m) against the global product, where Q_m
    is the local product deflated by the local reduced space."""
    if space.dim > cap:
        raise ResourceError(f"dense oracle limited to {cap} DoFs")
    M = dense(assemble_product(space, "vh") if product is None else product)
    Q = np.zeros_like(M)
    for m, B in enumerate(basis_blocks):
        sl = space.block_slice(m)
        Mm = M[sl, sl]
        if B.shape[1]:
            MB = Mm @ B
            Q[sl, sl] = Mm - MB @ np.linalg.solve(B.T @ MB, MB.T)
        else:
            Q[sl, sl] = Mm
    w, _ = generalized_eigh((Q + Q.T) / 2, M)
    return float(np.sqrt(max(w[0], 0.0)))


# ---------------------------------------------------------------------------
# flux reconstruction

def oswald_interpolate(space: BlockSpace, u, dirichlet_sides=SIDES):
    """Nodal average of a broken Q1 field; nodes on Dirichlet sides are set to zero."""
    g = space.grid
    vals = np.asarray(u, float)[space.cell_dofs]
    acc = np.zeros(g.num_nodes)
    cnt = np.zeros(g.num_nodes)
    np.add.at(acc, g.cell_nodes.ravel(), vals.ravel())
    np.add.at(cnt, g.cell_nodes.ravel(), 1.0)
    out = acc / cnt
    sides = [SIDES.index(s) for s in dirichlet_sides]
    if sides:
        out[g.boundary_node_sides[:, sides].any(axis=1)] = 0.0
    return out


@dataclass
class RTField:
    """Lowest-order Raviart-Thomas field: flux integral over each face along n_sigma."""
    space: BlockSpace
    flux: np.ndarray

    def divergence(self):
        g = self.space.grid
        cf = g.cell_faces
        sign = np.where(g.face_plus[cf] == np.arange(g.num_cells)[:, None], 1.0, -1.0)
        # boundary faces carry outward normals of their only cell
        return (self.flux[cf] * sign).sum(axis=1) / g.cell_area

    def components(self):
        """Normal components on left/right (x) and bottom/top (y) faces per cell, as R.e_axis."""
        g = self.space.grid
        cf = g.cell_faces
        comp = self.flux[cf] / g.face_h[cf]
        # convert from n_sigma to the coordinate direction
        comp = comp * g.face_normal[cf].sum(axis=2)
        return comp


def flux_reconstruct(op: AffineBlockOperator, u, mu):
    """Face fluxes int_sigma (-{kappa grad u . n} + w h^-1 [u]) on faces with terms,
    plain -{kappa grad u . n} inside conforming subdomains, zero on Neumann faces."""
    space, g = op.space, op.space.grid
    kap = op.problem.kappa(mu)
    u = np.asarray(u, float)
    flux = np.zeros(g.num_faces)
    dirichlet = [SIDES.index(s) for s in op.problem.dirichlet_sides]
    w = op.penalty_weights
    for axis in (0, 1):
        sel = np.flatnonzero((g.face_axis == axis) & ~g.is_boundary_face)
        fd = face_data(g.hx, g.hy, axis)
        U = np.hstack([u[space.cell_dofs[g.face_plus[sel]]], u[space.cell_dofs[g.face_minus[sel]]]])
        kp, km = kap[g.face_plus[sel]], kap[g.face_minus[sel]]
        mean_grad = 0.5 * (kp[:, None] * (U @ fd.grad_plus.T) + km[:, None] * (U @ fd.grad_minus.T))
        jump = U @ fd.jump.T
        h = fd.length
        flux[sel] = h * ((-mean_grad + (w[sel] / h)[:, None] * jump) @ fd.weights)
    for s, side in enumerate(SIDES):
        sel = np.flatnonzero(g.face_side == s)
        if s not in dirichlet:
            continue
        fd = face_data(g.hx, g.hy, 0 if s < 2 else 1, side)
        U = u[space.cell_dofs[g.face_plus[sel]]]
        grad = kap[g.face_plus[sel]][:, None] * (U @ fd.grad_plus.T)
        jump = U @ fd.jump.T
        h = fd.length
        flux[sel] = h * ((-grad + (w[sel] / h)[:, None] * jump) @ fd.weights)
    return RTField(space, flux)


def _cell_energy(space, diff_vals, kappa):
    """Per-cell kappa-weighted H1 seminorm squared of broken Q1 fields given corner values."""
    g = space.grid
    K = element_stiffness(g.hx, g.hy)
    return kappa * np.einsum("ci,ij,cj->c", diff_vals, K, diff_vals)


def _flux_mismatch(space, u, kappa_mu, kappa_hat, R: RTField):
    """Per-cell || kappa_hat^-1/2 (kappa_mu grad u + R) ||^2 by 2x2 Gauss (exact here)."""
    g = space.grid
    p, w = GAUSS2
    xi, eta = (a.ravel() for a in np.meshgrid(p, p, indexing="ij"))
    wq = np.outer(w, w).ravel()
    grads = q1_gradients(xi, eta, g.hx, g.hy)  # (4 pts, 4 shapes, 2)
    U = np.asarray(u, float)[space.cell_dofs]
    gu = np.einsum("ci,gid->cgd", U, grads)
    comp = R.components()  # left, right, bottom, top
    Rx = comp[:, 0:1] * (1 - xi)[None] + comp[:, 1:2] * xi[None]
    Ry = comp[:, 2:3] * (1 - eta)[None] + comp[:, 3:4] * eta[None]
    vx = kappa_mu[:, None] * gu[:, :, 0] + Rx
    vy = kappa_mu[:, None] * gu[:, :, 1] + Ry
    return g.cell_area * ((vx ** 2 + vy ** 2) @ wq) / kappa_hat


def has_constants(basis, tol=1e-8):
    out = []
    for P, B in zip(basis.products, basis.blocks):
        one = np.ones(P.shape[0])
        r = one - B @ (B.T @ (P @ one)) if B.shape[1] else one
        out.append(np.sqrt(max(r @ (P @ r), 0.0)) <= tol * np.sqrt(max(one @ (P @ one), 1e-300)))
    return np.array(out)


def flux_estimate(op: AffineBlockOperator, u, mu, mu_bar=None, mu_hat=None, basis=None):
    """Energy-norm estimator with nonconformity, residual and diffusive-flux parts.

    Returns the global estimate and per-subdomain indicators
    eta_m^2 = 2/lo [hi eta_nc^2 + (eta_r + lo_hat^-1/2 eta_df)^2].
    """
    problem = op.problem
    space, g, dd = op.space, op.space.grid, op.space.dd
    mu = problem.check_param(mu)
    mu_bar = problem.check_param(problem.center if mu_bar is None else mu_bar)
    mu_hat = problem.check_param(problem.center if mu_hat is None else mu_hat)
    if basis is not None and not np.all(has_constants(basis)):
        raise PreconditionError("every local reduced space must contain the constant function")
    lo, hi = theta_bounds(problem, mu, mu_bar)
    lo_hat, _ = theta_bounds(problem, mu, mu_hat)
    k_mu, k_bar, k_hat = problem.kappa(mu), problem.kappa(mu_bar), problem.kappa(mu_hat)

    osw = oswald_interpolate(space, u, problem.dirichlet_sides)
    diff = np.asarray(u, float)[space.cell_dofs] - osw[g.cell_nodes]
    nc_cells = _cell_energy(space, diff, k_bar)

    R = flux_reconstruct(op, u, mu)
    src = np.asarray(problem.source, float)
    r_cells = g.cell_area * (src - R.divergence()) ** 2
    df_cells = _flux_mismatch(space, u, k_mu, k_hat, R)

    kmin_corners = np.min([problem.kappa(c) for c in problem.corners()], axis=0)
    M = dd.num_subdomains
    eta_nc, eta_r, eta_df = np.empty(M), np.empty(M), np.empty(M)
    x0, x1, y0, y1 = dd.subdomain_box(0)
    h_m = np.hypot(x1 - x0, y1 - y0)
    for m, cells in enumerate(dd.subdomain_cells):
        eta_nc[m] = np.sqrt(max(nc_cells[cells].sum(), 0.0))
        kmin = float(kmin_corners[cells].min())
        eta_r[m] = np.sqrt(POINCARE * h_m ** 2 / kmin) * np.sqrt(r_cells[cells].sum())
        eta_df[m] = np.sqrt(df_cells[cells].sum())
    second = eta_r + eta_df / np.sqrt(lo_hat)
    estimate = (np.sqrt(hi) * np.sqrt((eta_nc ** 2).sum()) + np.sqrt((second ** 2).sum())) / np.sqrt(lo)
    indicators = np.sqrt(2.0 / lo * (hi * eta_nc ** 2 + second ** 2))
    consts = {"theta_lo": lo, "theta_hi": hi, "theta_lo_hat": lo_hat, "C_P": POINCARE, "h_m": h_m}
    parts = {"nc": eta_nc, "r": eta_r, "df": eta_df, "flux": R}
    return ErrorReport(float(estimate), indicators, "flux", consts, parts)


def conservation_defect(op: AffineBlockOperator, R: RTField):
    """Per subdomain: (int div R - int q) relative to the subdomain source scale."""
    g, dd = op.space.grid, op.space.dd
    div = R.divergence() * g.cell_area
    src = np.asarray(op.problem.source, float) * g.cell_area
    out = np.empty(dd.num_subdomains)
    for m, cells in enumerate(dd.subdomain_cells):
        scale = max(np.abs(src[cells]).sum(), np.abs(R.flux[g.cell_faces[cells]]).sum(), 1e-300)
        out[m] = abs(div[cells].sum() - src[cells].sum()) / scale
    return out


# ---------------------------------------------------------------------------
# offline/online residual norms

class ResidualOnline:
    """Affine decomposition of the local residual dual norms.

    For subdomain m the residual restricted to block m is a linear combination
    of ``f^q_m`` and ``A^q_{mn} B_n``; Riesz representatives of those columns
    against the local product give a Gram matrix, so online evaluation costs
    only small dense products.
    """

    def __init__(self, model, product=None):
        self.model = model
        op = model.op
        self.product = vh_product(op) if product is None else product
        self.solvers = _local_solvers(op, self.product)
        self.grams = [None] * op.space.num_blocks
        for m in range(op.space.num_blocks):
            self.update(m)

    def _neighbors(self, m):
        return [m] + list(self.model.space.dd.neighbors[m])

    def update(self, m, with_neighbors=False):
        targets = [m] + (list(self.model.space.dd.neighbors[m]) if with_neighbors else [])
        op, basis = self.model.op, self.model.basis
        s = op.space
        for k in targets:
            sl = s.block_slice(k)
            cols = [f[sl][:, None] for f in op.rhs]
            for q in range(op.num_terms):
                for n in self._neighbors(k):
                    B = basis.blocks[n]
                    if B.shape[1]:
                        cols.append(op.block(q, k, n) @ B)
            C = np.hstack(cols)
            X = self.solvers[k].solve(C)
            self.grams[k] = C.T @ X

    def coefficients(self, m, mu, coeffs):
        op, basis = self.model.op, self.model.basis
        c = op.coefficients(mu)
        off = self.model.offsets
        parts = [np.ones(len(op.rhs))]
        for q in range(op.num_terms):
            for n in self._neighbors(m):
                if basis.blocks[n].shape[1]:
                    parts.append(-c[q] * coeffs[off[n]:off[n + 1]])
        return np.concatenate(parts)

    def indicators(self, mu, coeffs):
        out = np.empty(len(self.grams))
        for m, G in enumerate(self.grams):
            v = self.coefficients(m, mu, coeffs)
            out[m] = np.sqrt(max(v @ G @ v, 0.0))
        return out


# ---------------------------------------------------------------------------
# refined reference solutions

def refine_problem(problem, factor=2):
    """Same cellwise data on a grid refined ``factor`` times per axis."""
    g = problem.grid
    fine = build_grid(g.domain, g.nx * factor, g.ny * factor)
    ij = fine.cell_ij // factor
    parent = ij[:, 1] * g.nx + ij[:, 0]
    return ParamProblem(fine, tuple(np.asarray(k)[parent] for k in problem.kappas), problem.thetas,
                        np.asarray(problem.source)[parent], problem.param_box, problem.dirichlet_sides,
                        problem.source_func, problem.name + "_refined", problem.regions), parent


def prolongate(space: BlockSpace, u, factor=2):
    """Corner values on the refined grid's cells of a broken Q1 field (exact prolongation)."""
    g = space.grid
    nfx = g.nx * factor
    fine_cells = np.arange(g.num_cells * factor * factor)
    fi, fj = fine_cells % nfx, fine_cells // nfx
    parent = (fj // factor) * g.nx + fi // factor
    a, b = (fi % factor) / factor, (fj % factor) / factor
    corners = np.array([[0, 0], [1, 0], [0, 1], [1, 1]]) / factor
    xi = a[:, None] + corners[None, :, 0]
    eta = b[:, None] + corners[None, :, 1]
    phi = q1_values(xi, eta)  # (cells, 4 corners, 4 shapes)
    vals = np.asarray(u, float)[space.cell_dofs[parent]]
    return np.einsum("cks,cs->ck", phi, vals)


def reference_energy_error(op: AffineBlockOperator, u, mu, mu_bar=None, factor=2, ref=None):
    """|||u_ref(mu) - u|||_{mu_bar} with a conforming reference on a refined grid.

    Returns (error, reference corner values) so that references can be reused.
    """
    problem = op.problem
    mu_bar = problem.center if mu_bar is None else mu_bar
    fine_problem, _ = refine_problem(problem, factor)
    if ref is None:
        fs = build_block_space(decompose(fine_problem.grid, 1, 1), "CG")
        fop = assemble_affine_fom(fine_problem, fs)
        ref = solve_fom(fop, mu).u[fs.cell_dofs]
    diff = ref - prolongate(op.space, u, factor)
    fg = fine_problem.grid
    K = element_stiffness(fg.hx, fg.hy)
    e2 = fine_problem.kappa(mu_bar) * np.einsum("ci,ij,cj->c", diff, K, diff)
    return float(np.sqrt(max(e2.sum(), 0.0))), ref
