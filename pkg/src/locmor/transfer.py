"""Transfer operators from oversampling-boundary data to local restrictions,
the associated generalized eigenproblem, and optimal local spaces."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps

from .errors import ConfigurationError, ResourceError
from .fom import PatchSystem
from .forms import ParamProblem, theta_eval
from .grid import OversamplingPatch, oversampling_patch
from .linalg import dense, generalized_eigh, gram_schmidt
from .space import element_mass, element_stiffness

DENSE_CAP = 4000


class TransferSetup:
    """Transfer operator data for one oversampling patch.

    ``target`` is ``("subdomain", m)``, or ``("interface", k)`` for the trace
    variant. Range vectors of the subdomain variant are nodal values on the
    subdomain grid in subdomain-lexicographic order.
    """

    def __init__(self, problem: ParamProblem, patch: OversamplingPatch, mu_bar=None,
                 kernel=None, range_product="energy"):
        self.problem = problem
        self.patch = patch
        self.system = PatchSystem(patch, problem)
        self.mu_bar = problem.check_param(problem.center if mu_bar is None else mu_bar)
        touches = any(s in problem.dirichlet_sides for s in patch.outer_sides)
        self.kernel = (not touches) if kernel is None else bool(kernel)
        kind, idx = patch.target
        self.kind = kind
        dd = patch.dd
        if kind == "subdomain":
            self.subdomain = idx
            self.range_nodes = self.system.patch_nodes_of(idx)
            self.range_cells = self.system.patch_cells_of(idx)
        else:
            itf = dd.interfaces[idx]
            self.subdomain = None
            self.interface = itf
            self.range_cells = np.arange(self.system.grid.num_cells)
            self.range_nodes = self._interface_nodes(itf)
        if range_product not in ("energy", "l2"):
            raise ConfigurationError(f"unknown range product {range_product!r}")
        self.range_product = range_product

    def _interface_nodes(self, itf):
        g = self.patch.dd.grid
        gl = np.unique(g.face_nodes[itf.faces].ravel())
        lookup = {int(n): k for k, n in enumerate(self.patch.nodes)}
        return np.array(sorted(lookup[int(n)] for n in gl))

    @property
    def num_source(self):
        return len(self.system.source_nodes)

    @property
    def num_range(self):
        return len(self.range_nodes)

    @cached_property
    def M_S(self):
        return self.system.source_mass

    def _cell_block(self, local, weights):
        """Assemble a cellwise form over the range cells, restricted to range nodes."""
        gp = self.system.grid
        cn = gp.cell_nodes[self.range_cells]
        vals = np.asarray(weights, float)[:, None, None] * local[None]
        A = sps.csr_matrix((vals.ravel(), (np.broadcast_to(cn[:, :, None], vals.shape).ravel(),
                                           np.broadcast_to(cn[:, None, :], vals.shape).ravel())),
                           shape=(gp.num_nodes,) * 2)
        return A

    @cached_property
    def region_mass(self):
        gp = self.system.grid
        return self._cell_block(element_mass(gp.hx, gp.hy), np.ones(len(self.range_cells)))

    @cached_property
    def M_R(self):
        if self.kind == "interface":
            return self._interface_mass()
        idx = self.range_nodes
        mass = self.region_mass[idx][:, idx]
        if self.range_product == "l2":
            return mass.tocsr()
        gp = self.system.grid
        th = theta_eval(self.problem, self.mu_bar)
        kap = sum(t * k[self.range_cells] for t, k in zip(th, self.system.local_problem.kappas))
        energy = self._cell_block(element_stiffness(gp.hx, gp.hy), kap)[idx][:, idx]
        # mean-value term: a norm on constants that leaves mean-free functions untouched
        w = np.asarray(mass.sum(axis=0)).ravel()
        area = w.sum()
        diam2 = self._range_diam2()
        omega = float(kap.mean()) / diam2 / area
        return (energy + omega * sps.csr_matrix(np.outer(w, w))).tocsr()

    def _range_diam2(self):
        pts = self.system.grid.node_coords[self.range_nodes]
        return float(((pts.max(axis=0) - pts.min(axis=0)) ** 2).sum())

    def _interface_mass(self):
        gp = self.system.grid
        h = gp.hy if self.interface.axis == 0 else gp.hx
        n = self.num_range
        M = np.zeros((n, n))
        for a in range(n - 1):
            M[a:a + 2, a:a + 2] += h / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
        return sps.csr_matrix(M)

    @cached_property
    def _kernel_weights(self):
        """Mean-value functional weights over the kernel region (range region or whole patch)."""
        if self.kind == "interface":
            return np.asarray(self.system.mass.sum(axis=0)).ravel()
        return np.asarray(self.region_mass.sum(axis=0)).ravel()

    def project_kernel(self, U):
        """Subtract the L2 mean over the kernel region (patch nodal vectors)."""
        if not self.kernel:
            return U
        w = self._kernel_weights
        return U - np.outer(np.ones(U.shape[0]), (w @ U) / w.sum()).reshape(U.shape)

    def lift(self, zeta, mu, with_rhs=False):
        return self.system.solve(mu, zeta, with_rhs)

    def restrict(self, U):
        return U[self.range_nodes]

    def constant(self):
        return np.ones(self.num_range)


def apply_transfer(setup: TransferSetup, mu, zeta):
    """T zeta: patch solve, kernel projection, restriction to the range region."""
    zeta = np.asarray(zeta, float)
    U = setup.lift(zeta, mu)
    return setup.restrict(setup.project_kernel(U))


def assemble_transfer_matrix(setup: TransferSetup, mu, cap=DENSE_CAP):
    if setup.num_source > cap:
        raise ResourceError(f"{setup.num_source} source DoFs exceed the dense cap {cap}")
    return apply_transfer(setup, mu, np.eye(setup.num_source))


@dataclass(frozen=True)
class TransferEig:
    eigenvalues: np.ndarray  # all, descending, clipped at zero
    zetas: np.ndarray  # M_S-orthonormal source vectors
    modes: np.ndarray  # T zeta_j, with squared M_R norms equal to the eigenvalues


def transfer_eigs(setup: TransferSetup, mu, n=None, T=None):
    """Generalized eigenpairs of T^t M_R T z = lambda M_S z (dense, Cholesky-reduced)."""
    T = assemble_transfer_matrix(setup, mu) if T is None else T
    MR = dense(setup.M_R)
    lam, Z = generalized_eigh(T.T @ MR @ T, setup.M_S)
    lam = np.maximum(lam, 0.0)
    k = len(lam) if n is None else int(n)
    if k > len(lam):
        raise ConfigurationError(f"requested {k} modes, only {len(lam)} source DoFs")
    return TransferEig(lam, Z[:, :k], T @ Z[:, :k])


def projection_error_norm(T, basis, M_S, M_R):
    """Operator norm (M_S -> M_R) of T minus its M_R-orthogonal projection onto ``basis``."""
    MR = dense(M_R)
    E = T - basis @ (basis.T @ (MR @ T)) if basis is not None and basis.shape[1] else T
    if E.shape[1] == 0:
        return 0.0
    lam, _ = generalized_eigh(E.T @ MR @ E, M_S)
    return float(np.sqrt(max(lam[0], 0.0)))


def local_source_solution(setup: TransferSetup, mu):
    """Range restriction of the patch solution with zero boundary data and the true source."""
    U = setup.lift(np.zeros(setup.num_source), mu, with_rhs=True)
    return setup.restrict(setup.project_kernel(U[:, None]))[:, 0]


def optimal_space(setup: TransferSetup, mu, n, with_rhs=False, eig=None):
    """M_R-orthonormal basis of the first n modes, the source solution and the kernel."""
    if n < 0:
        raise ConfigurationError("n must be non-negative")
    cols = []
    if n:
        eig = transfer_eigs(setup, mu, n) if eig is None else eig
        cols.append(eig.modes[:, :n])
    if with_rhs and np.any(np.asarray(setup.system.local_problem.source) != 0):
        cols.append(local_source_solution(setup, mu)[:, None])
    if setup.kernel:
        cols.append(setup.constant()[:, None])
    if not cols:
        return np.zeros((setup.num_range, 0))
    B, _ = gram_schmidt(np.hstack(cols), setup.M_R)
    return B


def apriori_interface_bound(lambdas, count=None, c_gamma=1.0):
    """count * c_gamma * max sqrt(lambda_{n+1}) over interfaces."""
    lam = np.asarray(lambdas, float)
    if np.any(lam < 0):
        raise ConfigurationError("eigenvalues must be non-negative")
    count = len(lam) if count is None else count
    return float(count * c_gamma * np.sqrt(lam.max())) if lam.size else 0.0


def subdomain_setup(problem, dd, m, layers=1, **kw):
    return TransferSetup(problem, oversampling_patch(dd, ("subdomain", m), layers), **kw)
