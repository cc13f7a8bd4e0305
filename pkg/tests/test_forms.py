import numpy as np
import pytest
from hypothesis import given, strategies as st

from locmor.errors import ConfigurationError, ParameterError
from locmor.forms import (assemble_affine_fom, assemble_rhs, channel_problem, constant_problem,
                          theta_bounds, theta_eval, two_term_problem)
from locmor.grid import build_grid, decompose
from locmor.space import assemble_cell_matrix, build_block_space, element_stiffness


def _op(nx, ny, Mx, My, kind, problem=None, domain=(0, 1, 0, 1), **kw):
    g = build_grid(domain, nx, ny)
    problem = constant_problem(g, 1.0, 0.0) if problem is None else problem
    return assemble_affine_fom(problem, build_block_space(decompose(problem.grid, Mx, My), kind), **kw)


def _two_term(nx=4, kind="DG", Mx=2, My=2, seed=0):
    g = build_grid((0, 1, 0, 1), nx, nx)
    r = np.random.default_rng(seed)
    p = two_term_problem(g, r.uniform(0.5, 2.0, g.num_cells), r.uniform(0.0, 5.0, g.num_cells),
                         source=r.normal(size=g.num_cells))
    return assemble_affine_fom(p, build_block_space(decompose(g, Mx, My), kind))


def test_two_cell_dg_laplacian_rows_sum_to_zero():
    g = build_grid((0, 2, 0, 1), 2, 1)
    p = constant_problem(g, 1.0, 0.0, dirichlet_sides=())
    op = assemble_affine_fom(p, build_block_space(decompose(g, 1, 1), "DG"), c_pen=4.0)
    inner = np.flatnonzero(~g.is_boundary_face)
    assert np.allclose(op.penalty_weights[inner], 4.0)
    A = op.assemble([0.5]).toarray()
    assert np.allclose(A, A.T)
    assert np.allclose(A.sum(axis=1), 0.0)


@pytest.mark.parametrize("kind", ["CG", "DG"])
def test_neumann_constant_in_kernel(kind):
    g = build_grid((0, 1, 0, 1), 4, 4)
    op = _op(4, 4, 2, 2, kind, constant_problem(g, 3.0, 0.0, dirichlet_sides=()))
    assert np.abs(op.assemble([0.5]) @ np.ones(op.space.dim)).max() < 1e-12


@pytest.mark.parametrize("kind", ["CG", "DG"])
def test_coercive_on_4x4_grid(kind):
    op = _op(4, 4, 2, 2, kind)
    assert np.linalg.eigvalsh(op.assemble([0.5]).toarray())[0] > 0


def test_unit_source_on_one_cell():
    g = build_grid((0, 1, 0, 1), 1, 1)
    s = build_block_space(decompose(g, 1, 1), "CG")
    assert np.allclose(sum(assemble_rhs(constant_problem(g, 1.0, 1.0), s)), 0.25)
    assert not np.any(sum(assemble_rhs(constant_problem(g, 1.0, 0.0), s)))


def test_channel_source_total():
    p = channel_problem(200, 40)
    op = assemble_affine_fom(p, build_block_space(decompose(p.grid, 25, 5), "CG"))
    expected = 2e3 * 0.15 * 0.15 - 1e3 * 0.15 * 0.15 * 2
    assert op.rhs_vector().sum() == pytest.approx(expected, abs=1e-9)
    assert (p.source > 0).sum() == 36


def test_channel_thetas():
    p = channel_problem(20, 4)
    assert np.allclose(theta_eval(p, [1.0]), [1.0, 0.0])
    assert np.allclose(theta_eval(p, [0.1]), [1.0, 0.9])
    with pytest.raises(ParameterError):
        theta_eval(p, [1.5])
    with pytest.raises(ParameterError):
        theta_eval(p, [0.5, 0.5])


def test_theta_bounds_examples():
    p = channel_problem(20, 4)
    assert theta_bounds(p, [0.55], [0.55]) == pytest.approx((1.0, 1.0))
    assert theta_bounds(p, [0.1], [0.55]) == pytest.approx((1.0, 2.0))
    lo, hi = theta_bounds(p, [1.0], [0.55])
    assert lo == pytest.approx(1e-12 / 0.45) and hi == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        theta_bounds(p, [0.5], [1.0])


def test_theta_bounds_norm_equivalence(rng):
    op = _two_term(4, "DG")
    p, s = op.problem, op.space
    mu, mu_bar = np.array([0.9]), p.center
    lo, hi = theta_bounds(p, mu, mu_bar)
    K = element_stiffness(s.grid.hx, s.grid.hy)
    a, b = (assemble_cell_matrix(s, K, p.kappa(m)) for m in (mu, mu_bar))
    X = rng.normal(size=(s.dim, 1000))
    ea, eb = (X * (a @ X)).sum(axis=0), (X * (b @ X)).sum(axis=0)
    assert np.all(ea >= lo * eb * (1 - 1e-12))
    assert np.all(ea <= hi * eb * (1 + 1e-12))


@given(st.floats(0.1, 1.0), st.sampled_from(["CG", "DG"]))
def test_symmetric_positive_definite(mu, kind):
    op = _two_term(4, kind)
    A = op.assemble([mu]).toarray()
    assert np.abs(A - A.T).max() <= 1e-12 * np.abs(A).max()
    assert np.linalg.eigvalsh(A)[0] > 0


def test_dg_matches_single_domain_ipdg():
    g = build_grid((0, 1, 0, 1), 4, 4)
    r = np.random.default_rng(3)
    p = two_term_problem(g, r.uniform(0.5, 2, 16), r.uniform(0, 5, 16))
    A1 = assemble_affine_fom(p, build_block_space(decompose(g, 1, 1), "DG")).assemble([0.4]).toarray()
    s2 = build_block_space(decompose(g, 2, 2), "DG")
    A2 = assemble_affine_fom(p, s2).assemble([0.4]).toarray()
    s1 = build_block_space(decompose(g, 1, 1), "DG")
    perm = np.empty(s1.dim, int)
    perm[s2.cell_dofs.ravel()] = s1.cell_dofs.ravel()
    assert np.allclose(A1[np.ix_(perm, perm)], A2, atol=1e-12)


@pytest.mark.parametrize("kind", ["CG", "DG"])
def test_coupling_only_between_neighbours(kind):
    op = _two_term(6, kind, Mx=3, My=2)
    nb = op.space.dd.neighbors
    for m, n in op.block_pattern():
        assert m == n or n in nb[m]


def test_non_positive_penalty_rejected():
    with pytest.raises(ConfigurationError):
        _op(2, 2, 1, 1, "DG", c_pen=0.0)
