"""Affine parametric assembly of the interior-penalty localized forms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sps

from .errors import ConfigurationError, ParameterError
from .grid import SIDES, FineGrid, build_grid
from .space import (BlockSpace, assemble_cell_matrix, assemble_face_matrix, assemble_penalty,
                    coupled_faces, element_load, element_stiffness, face_groups, q1_values)


@dataclass(frozen=True, eq=False)
class ParamProblem:
    """Diffusion problem ``-div(kappa(mu) grad u) = q`` with affine kappa.

    ``kappas[q]`` are cellwise-constant fields, ``thetas[q]`` the matching
    coefficient functions. ``source`` holds cell values; if ``source_func`` is
    given it is integrated by quadrature instead.
    """
    grid: FineGrid
    kappas: tuple
    thetas: tuple
    source: np.ndarray
    param_box: tuple  # ((lo, hi), ...)
    dirichlet_sides: tuple = SIDES
    source_func: Callable | None = None
    name: str = "problem"
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.kappas) != len(self.thetas) or not self.kappas:
            raise ConfigurationError("need matching, non-empty kappa and theta sequences")
        for k in self.kappas:
            if np.shape(k) != (self.grid.num_cells,):
                raise ConfigurationError("kappa fields must hold one value per cell")
        bad = [s for s in self.dirichlet_sides if s not in SIDES]
        if bad:
            raise ConfigurationError(f"unknown boundary sides {bad}")

    @property
    def num_params(self):
        return len(self.param_box)

    @property
    def center(self):
        return np.array([(lo + hi) / 2 for lo, hi in self.param_box])

    def corners(self):
        grids = np.meshgrid(*[[lo, hi] for lo, hi in self.param_box], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def check_param(self, mu):
        mu = np.atleast_1d(np.asarray(mu, float))
        if mu.shape != (self.num_params,):
            raise ParameterError(f"expected {self.num_params} parameter components, got {mu.shape}")
        for v, (lo, hi) in zip(mu, self.param_box):
            tol = 1e-12 * max(1.0, abs(lo), abs(hi))
            if not (lo - tol <= v <= hi + tol) or not np.isfinite(v):
                raise ParameterError(f"parameter {mu} outside {self.param_box}")
        return mu

    def kappa(self, mu):
        th = theta_eval(self, mu)
        return sum(t * k for t, k in zip(th, self.kappas))

    def kappa_min(self):
        """Smallest cell value of kappa over the parameter box corners."""
        return min(float(self.kappa(c).min()) for c in self.corners())

    def sample(self, count, rng):
        lo = np.array([b[0] for b in self.param_box])
        hi = np.array([b[1] for b in self.param_box])
        return lo + (hi - lo) * rng.random((count, self.num_params))


def theta_eval(problem: ParamProblem, mu):
    mu = problem.check_param(mu)
    vals = np.array([float(th(mu)) for th in problem.thetas])
    if not np.all(np.isfinite(vals)):
        raise ParameterError(f"non-finite coefficients at {mu}")
    return vals


THETA_FLOOR = 1e-12


def theta_bounds(problem: ParamProblem, mu, mu_bar):
    """(min_q, max_q) of theta_q(mu) / theta_q(mu_bar), with theta(mu) clipped at 1e-12."""
    ref = theta_eval(problem, mu_bar)
    if np.any(ref <= 0):
        raise ConfigurationError(f"coefficients at the reference parameter must be positive, got {ref}")
    ratio = np.maximum(theta_eval(problem, mu), THETA_FLOOR) / ref
    return float(ratio.min()), float(ratio.max())


@dataclass(frozen=True, eq=False)
class AffineBlockOperator:
    """``A(mu) = sum_q theta_q(mu) A^q`` on a block space.

    The last term is the penalty term with coefficient one; the others carry
    volume and consistency contributions of ``kappas[q]``.
    """
    problem: ParamProblem
    space: BlockSpace
    matrices: tuple
    rhs: tuple
    penalty_weights: np.ndarray

    @property
    def num_terms(self):
        return len(self.matrices)

    def coefficients(self, mu):
        return np.append(theta_eval(self.problem, mu), 1.0)

    def assemble(self, mu):
        c = self.coefficients(mu)
        out = c[0] * self.matrices[0]
        for t, A in zip(c[1:], self.matrices[1:]):
            out = out + t * A
        return out.tocsr()

    def rhs_vector(self, mu=None):
        return sum(self.rhs)

    def block(self, q, m, n):
        s = self.space
        return self.matrices[q][s.block_slice(m), s.block_slice(n)]

    def block_pattern(self):
        """Pairs (m, n) carrying a nonzero block in some term."""
        pairs = set()
        sub = self.space.dof_subdomain
        for A in self.matrices:
            coo = A.tocoo()
            nz = coo.data != 0
            pairs |= set(zip(sub[coo.row[nz]].tolist(), sub[coo.col[nz]].tolist()))
        return pairs


def penalty_weights(problem: ParamProblem, c_pen=16.0, mu_ref=None):
    """Face weights ``c_pen * max(kappa+, kappa-)`` with kappa at a reference parameter."""
    if c_pen <= 0:
        raise ConfigurationError("penalty constant must be positive")
    g = problem.grid
    kref = problem.kappa(problem.center if mu_ref is None else mu_ref)
    kp = kref[g.face_plus]
    km = np.where(g.face_minus >= 0, kref[np.maximum(g.face_minus, 0)], 0.0)
    w = c_pen * np.maximum(kp, km)
    if np.any(w <= 0):
        raise ConfigurationError("non-positive penalty weight")
    return w


def _face_kappa_terms(space, mask, kappa):
    """Consistency terms a^c(u,v) + a^c(v,u) for one cellwise kappa."""
    g = space.grid
    out = sps.csr_matrix((space.dim, space.dim))
    for faces, fd in face_groups(space, mask):
        cp, cm = fd.consistency()
        out = out + assemble_face_matrix(space, faces, cp + cp.T, kappa[g.face_plus[faces]])
        if cm is not None:
            out = out + assemble_face_matrix(space, faces, cm + cm.T, kappa[g.face_minus[faces]])
    return out


def assemble_rhs(problem: ParamProblem, space: BlockSpace):
    """Single affine rhs term: the load vector of the source."""
    g = problem.grid
    if problem.source_func is None:
        cell_vals = np.asarray(problem.source, float)[:, None] * element_load(g.hx, g.hy)[None, :]
    else:
        p, w = np.polynomial.legendre.leggauss(3)
        p, w = (p + 1) / 2, w / 2
        xi, eta = (a.ravel() for a in np.meshgrid(p, p, indexing="ij"))
        wq = np.outer(w, w).ravel()
        phi = q1_values(xi, eta)
        x0 = g.node_coords[g.cell_nodes[:, 0]]
        X = x0[:, 0:1] + xi[None, :] * g.hx
        Y = x0[:, 1:2] + eta[None, :] * g.hy
        cell_vals = g.cell_area * (problem.source_func(X, Y) * wq[None, :]) @ phi
    f = np.zeros(space.dim)
    np.add.at(f, space.cell_dofs.ravel(), cell_vals.ravel())
    return (f,)


def assemble_affine_fom(problem: ParamProblem, space: BlockSpace, c_pen=16.0, mu_pen=None):
    g = problem.grid
    if space.grid is not g:
        raise ConfigurationError("space and problem live on different grids")
    mask = coupled_faces(space, problem.dirichlet_sides)
    stiff = element_stiffness(g.hx, g.hy)
    mats = []
    for kq in problem.kappas:
        kq = np.asarray(kq, float)
        A = assemble_cell_matrix(space, stiff, kq) + _face_kappa_terms(space, mask, kq)
        mats.append(A.tocsr())
    w = penalty_weights(problem, c_pen, mu_pen)
    mats.append(assemble_penalty(space, mask, w).tocsr())
    return AffineBlockOperator(problem, space, tuple(mats), assemble_rhs(problem, space), w)


# ----------------------------------------------------------------------------
# problem factories

def constant_problem(grid, kappa=1.0, source=0.0, dirichlet_sides=SIDES, name="constant"):
    """Single-term problem with constant diffusion and source; parameter box [0, 1]."""
    return ParamProblem(grid, (np.full(grid.num_cells, float(kappa)),), (lambda mu: 1.0,),
                        np.full(grid.num_cells, float(source)), ((0.0, 1.0),),
                        tuple(dirichlet_sides), name=name)


def manufactured_problem(nx, ny=None):
    """Unit square, kappa = 1, exact solution sin(pi x) sin(pi y)."""
    grid = build_grid((0.0, 1.0, 0.0, 1.0), nx, nx if ny is None else ny)

    def f(x, y):
        return 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)

    c = grid.cell_centers
    return ParamProblem(grid, (np.ones(grid.num_cells),), (lambda mu: 1.0,), f(c[:, 0], c[:, 1]),
                        ((0.0, 1.0),), SIDES, source_func=f, name="manufactured")


def manufactured_exact(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


CHANNEL_DOMAIN = (0.0, 5.0, 0.0, 1.0)
SOURCE_BOXES = (((0.95, 1.10, 0.30, 0.45), 2e3),
                ((3.00, 3.15, 0.75, 0.90), -1e3),
                ((4.25, 4.40, 0.25, 0.40), -1e3))
CHANNEL_STRIP = (1.10, 4.25, 0.45, 0.55)


def permeability_field(x, y):
    """Deterministic synthetic high-contrast field on a 100 x 20 lattice over [0,5]x[0,1].

    Values lie in [1e-2, 1e2]: a smooth low-permeability background crossed by
    meandering high-permeability channels.
    """
    i = np.clip(np.floor(np.asarray(x) / 0.05), 0, 99)
    j = np.clip(np.floor(np.asarray(y) / 0.05), 0, 19)
    xc, yc = (i + 0.5) * 0.05, (j + 0.5) * 0.05
    base = -1.0 + 0.8 * np.sin(2.3 * xc + 1.1) * np.cos(5.1 * yc) + 0.2 * np.sin(7.7 * xc * yc)
    logk = np.clip(base, -2.0, 0.0)
    for amp, freq, phase, mid in ((0.20, 1.3, 0.0, 0.25), (0.15, 0.9, 2.0, 0.75)):
        centre = mid + amp * np.sin(freq * xc + phase)
        logk = np.where(np.abs(yc - centre) < 0.06, 2.0, logk)
    return 10.0 ** logk


def channel_indicator(x, y, strength=100.0):
    x0, x1, y0, y1 = CHANNEL_STRIP
    return np.where((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1), strength, 0.0)


def box_source(x, y):
    out = np.zeros(np.broadcast(x, y).shape)
    for (x0, x1, y0, y1), val in SOURCE_BOXES:
        out = np.where((x >= x0) & (x <= x1) & (y >= y0) & (y <= y1), val, out)
    return out


def channel_problem(nx=200, ny=40, contrast_strength=100.0):
    """Scaled channel model: kappa(mu) = (1 + (1 - mu) lambda_c) kappa_eps on [0,5]x[0,1], mu in [0.1, 1]."""
    grid = build_grid(CHANNEL_DOMAIN, nx, ny)
    c = grid.cell_centers
    keps = permeability_field(c[:, 0], c[:, 1])
    lam = channel_indicator(c[:, 0], c[:, 1], contrast_strength)
    return ParamProblem(grid, (keps, lam * keps), (lambda mu: 1.0, lambda mu: 1.0 - float(mu[0])),
                        box_source(c[:, 0], c[:, 1]), ((0.1, 1.0),), SIDES, name="channel",
                        regions={"channel": CHANNEL_STRIP})


def two_term_problem(grid, kappa1, kappa2, box=((0.1, 1.0),), dirichlet_sides=SIDES, source=None,
                     name="two_term"):
    """kappa(mu) = kappa1 + (1 - mu) kappa2."""
    src = np.zeros(grid.num_cells) if source is None else np.asarray(source, float)
    return ParamProblem(grid, (np.asarray(kappa1, float), np.asarray(kappa2, float)),
                        (lambda mu: 1.0, lambda mu: 1.0 - float(mu[0])), src, tuple(box),
                        tuple(dirichlet_sides), name=name)


def restrict_problem(problem: ParamProblem, cells, grid: FineGrid, dirichlet_sides):
    """Same data on a sub-grid whose cells are ``cells`` of the original grid."""
    return ParamProblem(grid, tuple(np.asarray(k)[cells] for k in problem.kappas), problem.thetas,
                        np.asarray(problem.source)[cells], problem.param_box, tuple(dirichlet_sides),
                        None, problem.name + "_patch")


__all__: Sequence[str] = [
    "ParamProblem", "AffineBlockOperator", "theta_eval", "theta_bounds", "assemble_affine_fom", "assemble_rhs",
    "penalty_weights", "constant_problem", "manufactured_problem", "manufactured_exact",
    "channel_problem", "two_term_problem", "permeability_field", "box_source",
]
