"""Shared small instances for the test modules."""
import numpy as np

from locmor.forms import channel_problem, constant_problem, two_term_problem
from locmor.grid import build_grid, decompose
from locmor.transfer import subdomain_setup


def unit_setup(n=10, M=5, **kw):
    """kappa = 1 patch around the centre subdomain of an M x M layout."""
    p = constant_problem(build_grid((0, 1, 0, 1), n, n), 1.0, 0.0)
    dd = decompose(p.grid, M, M)
    return subdomain_setup(p, dd, dd.subdomain_index(M // 2, M // 2), **kw)


def channel_setup(nx=200, ny=40):
    p = channel_problem(nx, ny)
    dd = decompose(p.grid, 25, 5)
    return subdomain_setup(p, dd, dd.subdomain_index(12, 2))


def random_two_term(n=8, seed=0, kind_source=True):
    g = build_grid((0, 1, 0, 1), n, n)
    r = np.random.default_rng(seed)
    src = r.normal(size=g.num_cells) if kind_source else None
    return two_term_problem(g, r.uniform(0.5, 2.0, g.num_cells), r.uniform(0.0, 5.0, g.num_cells), source=src)


def two_term_setup(n=10, M=5, kappa2=None, seed=0):
    """Centre-subdomain transfer setup for kappa(mu) = kappa1 + (1 - mu) kappa2."""
    g = build_grid((0, 1, 0, 1), n, n)
    r = np.random.default_rng(seed)
    k2 = r.uniform(0.0, 5.0, g.num_cells) if kappa2 is None else np.broadcast_to(kappa2, g.num_cells)
    p = two_term_problem(g, r.uniform(0.5, 2.0, g.num_cells), k2)
    dd = decompose(g, M, M)
    return subdomain_setup(p, dd, dd.subdomain_index(M // 2, M // 2))


def small_op(n=8, M=2, kind="CG", seed=0, source=True):
    """Affine two-term operator on an M x M decomposition of an n x n grid."""
    from locmor.forms import assemble_affine_fom
    from locmor.space import build_block_space
    p = random_two_term(n, seed, source)
    return assemble_affine_fom(p, build_block_space(decompose(p.grid, M, M), kind))
