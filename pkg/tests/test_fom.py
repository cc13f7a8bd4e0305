import numpy as np
import pytest
import scipy.sparse as sps

from locmor.errors import NumericalError
from locmor.fom import PatchSystem, dual_norm, energy_norm, l2_error, solve_fom, solve_spd
from locmor.forms import (assemble_affine_fom, constant_problem, manufactured_exact,
                          manufactured_problem, two_term_problem)
from locmor.grid import build_grid, decompose, oversampling_patch
from locmor.space import build_block_space


def _nodal(space, u):
    out = np.zeros(space.grid.num_nodes)
    out[space.grid.cell_nodes] = space.broken_values(u)
    return out


@pytest.mark.parametrize("nx", [1, 4])
def test_zero_source_gives_zero(nx):
    g = build_grid((0, 1, 0, 1), nx, nx)
    op = assemble_affine_fom(constant_problem(g), build_block_space(decompose(g, 1, 1), "CG"))
    sol = solve_fom(op, [0.5])
    assert not sol.u.any()


@pytest.mark.parametrize("kind", ["CG", "DG"])
def test_manufactured_rate(kind):
    errs = []
    for n in (8, 16, 32):
        p = manufactured_problem(n)
        s = build_block_space(decompose(p.grid, 2, 2), kind)
        errs.append(l2_error(s, solve_fom(assemble_affine_fom(p, s), [0.5]).u, manufactured_exact))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all((rates > 1.8) & (rates < 2.2))


@pytest.mark.parametrize("kind", ["CG", "DG"])
def test_galerkin_residual(kind):
    g = build_grid((0, 1, 0, 1), 8, 8)
    r = np.random.default_rng(0)
    p = two_term_problem(g, r.uniform(1, 2, 64), r.uniform(0, 10, 64), source=r.normal(size=64))
    op = assemble_affine_fom(p, build_block_space(decompose(g, 2, 2), kind))
    sol = solve_fom(op, [0.3])
    f = op.rhs_vector()
    assert np.linalg.norm(f - op.assemble([0.3]) @ sol.u) <= 1e-10 * np.linalg.norm(f)
    assert sol.residual <= 1e-10


def test_pcg_path_matches_direct():
    p = manufactured_problem(12)
    op = assemble_affine_fom(p, build_block_space(decompose(p.grid, 2, 2), "CG"))
    a = solve_fom(op, [0.5]).u
    b = solve_fom(op, [0.5], direct_limit=0).u
    assert np.allclose(a, b, atol=1e-8 * np.abs(a).max())


def test_solver_failure_reports_residual():
    p = manufactured_problem(16)
    A = assemble_affine_fom(p, build_block_space(decompose(p.grid, 1, 1), "CG")).assemble([0.5])
    with pytest.raises(NumericalError) as info:
        solve_spd(A, np.ones(A.shape[0]), direct_limit=0, maxiter=2)
    assert info.value.residual > 1e-10


def _interior_patch(problem, M=5):
    dd = decompose(problem.grid, M, M)
    return dd, oversampling_patch(dd, ("subdomain", dd.subdomain_index(M // 2, M // 2)), 1)


def test_constant_boundary_data_reproduced():
    g = build_grid((0, 1, 0, 1), 10, 10)
    _, patch = _interior_patch(constant_problem(g))
    sys_ = PatchSystem(patch, constant_problem(g))
    U = sys_.solve([0.5], np.full(len(sys_.source_nodes), 2.5))
    assert np.allclose(U, 2.5)
    assert not sys_.solve([0.5], np.zeros(len(sys_.source_nodes))).any()


def test_one_dimensional_patch_is_linear():
    g = build_grid((0, 5, 0, 1), 10, 1)
    p = constant_problem(g, dirichlet_sides=("left", "right"))
    dd = decompose(g, 5, 1)
    sys_ = PatchSystem(oversampling_patch(dd, ("subdomain", 2), 1), p)
    x = sys_.grid.node_coords[:, 0]
    gvals = (x[sys_.source_nodes] - x.min()) / (x.max() - x.min())
    U = sys_.solve([0.5], gvals)
    assert np.allclose(U, (x - x.min()) / (x.max() - x.min()), atol=1e-12)


def test_patch_restriction_property():
    g = build_grid((0, 1, 0, 1), 10, 10)
    r = np.random.default_rng(5)
    p = two_term_problem(g, r.uniform(1, 2, 100), r.uniform(0, 3, 100), source=r.normal(size=100))
    space = build_block_space(decompose(g, 1, 1), "CG")
    u = _nodal(space, solve_fom(assemble_affine_fom(p, space), [0.7]).u)
    _, patch = _interior_patch(p)
    sys_ = PatchSystem(patch, p)
    U = sys_.solve([0.7], u[patch.nodes][sys_.source_nodes], with_rhs=True)
    assert np.allclose(U, u[patch.nodes], atol=1e-10 * np.abs(u).max())


def test_norm_identities(rng):
    p = manufactured_problem(4)
    op = assemble_affine_fom(p, build_block_space(decompose(p.grid, 1, 1), "CG"))
    assert energy_norm(op, np.zeros(op.space.dim), [0.5]) == 0.0
    B = rng.normal(size=(6, 6))
    M = B @ B.T + 6 * np.eye(6)
    x = rng.normal(size=6)
    assert dual_norm(M @ x, M) == pytest.approx(np.sqrt(x @ M @ x))
    assert dual_norm(x, sps.identity(6)) == pytest.approx(np.linalg.norm(x))
