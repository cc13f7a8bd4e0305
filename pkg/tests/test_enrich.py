import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from helpers import small_op
from locmor.enrich import (CorrectionSolver, Estimator, MarkingConfig, closure_patch, doerfler,
                           enrich_online, local_correction, mark)
from locmor.errest import flux_estimate, local_dual_norms, residual_vector, vh_product
from locmor.errors import ConfigurationError, NumericalError
from locmor.fom import solve_fom
from locmor.grid import decompose
from locmor.rom import constant_basis, extend_basis, project, reconstruct, solve_rom


def test_config_validation():
    for kw in ({"strategy": "random"}, {"theta_doerf": 0.0}, {"theta_doerf": 1.5}, {"n_age": 0},
               {"theta_uni": 0.5}, {"delta_online": 0.0}):
        with pytest.raises(ConfigurationError):
            MarkingConfig(**kw)


def test_uniform_marks_everything():
    assert mark([0.1, 0.0, 2.0], MarkingConfig("uniform")) == [0, 1, 2]


def test_doerfler_hand_example():
    # 0.85^2 * 25 = 18.0625: 16 is not enough, 16 + 9 is
    assert mark([3, 4, 0, 0], MarkingConfig("doerfler")) == [0, 1]
    assert doerfler([3, 4, 0, 0], 0.85) == [1, 0]


@given(st.lists(st.floats(0, 10), min_size=1, max_size=12), st.floats(0.05, 1.0))
def test_doerfler_set_is_minimal(eta, theta):
    eta = np.array(eta)
    assume((eta ** 2).sum() > 0)
    out = doerfler(eta, theta)
    target = theta ** 2 * (eta ** 2).sum()
    assert (eta[out] ** 2).sum() >= target * (1 - 1e-12)
    assert (eta[out[:-1]] ** 2).sum() < target


def test_age_marking():
    cfg = MarkingConfig("combined", n_age=4, delta_online=100.0)
    ages = np.array([0, 4, 1, 5])
    assert mark([4, 0.1, 0.1, 0.1], cfg, ages) == [0, 1, 3]
    assert mark([0.1, 0.2, 3.0], MarkingConfig("age"), np.zeros(3, int)) == [2]


def test_combined_switches_to_uniform_above_threshold():
    cfg = MarkingConfig("combined", theta_uni=10.0, delta_online=1.0)
    assert mark([20.0, 0.0, 0.0], cfg) == [0, 1, 2]
    assert mark([5.0, 0.0, 0.0], cfg) == [0]


def test_marking_errors():
    with pytest.raises(NumericalError):
        mark([0.0, 0.0], MarkingConfig(), estimate=1.0)
    with pytest.raises(ConfigurationError):
        mark([-1.0, 2.0], MarkingConfig())
    assert mark([0.0, 0.0], MarkingConfig()) == []


def test_closure_patch_counts():
    op = small_op(n=12, M=3)
    dd = op.space.dd
    assert len(closure_patch(dd, dd.subdomain_index(1, 1))) == 9
    assert len(closure_patch(dd, 0)) == 4
    assert len(closure_patch(dd, dd.subdomain_index(1, 0))) == 6


def test_correction_of_fom_solution_is_zero():
    op = small_op(n=12, M=3)
    mu = [0.4]
    uh = solve_fom(op, mu).u
    solver = CorrectionSolver(op)
    assert np.abs(solver.correction(uh, mu, 4)).max() <= 1e-9 * np.abs(uh).max()
    model = project(op, constant_basis(op.space))
    extend_basis(model, 4, op.space.restrict(4, uh))
    assert not extend_basis(model, 4, local_correction(op, uh, mu, 4, solver))


def test_zero_data_gives_rejected_candidate():
    op = small_op(source=False)
    model = project(op, constant_basis(op.space))
    c = local_correction(op, np.zeros(op.space.dim), [0.5], 0)
    assert not c.any()
    assert not extend_basis(model, 0, c)


@pytest.mark.parametrize("kind", ["CG", "DG"])
def test_correction_solves_patch_residual(kind):
    op = small_op(n=12, M=3, kind=kind)
    mu = [0.3]
    P = vh_product(op)
    model = project(op, constant_basis(op.space))
    u = reconstruct(model.basis, solve_rom(model, mu))
    m = 4
    solver = CorrectionSolver(op)
    phi = solver.correction(u, mu, m)
    r = residual_vector(op, u + phi, mu)
    assert np.abs(r[solver.dofs(m)]).max() <= 1e-10 * np.abs(residual_vector(op, u, mu)).max()
    assert local_dual_norms(op, r, P)[m] < 1e-9 * local_dual_norms(op, residual_vector(op, u, mu), P)[m]
    uh = solve_fom(op, mu).u
    A = op.assemble(mu)
    before = (uh - u) @ A @ (uh - u)
    assert extend_basis(model, m, local_correction(op, u, mu, m, solver))
    v = reconstruct(model.basis, solve_rom(model, mu))
    assert (uh - v) @ A @ (uh - v) < before


def test_zero_steps_when_delta_exceeds_estimate():
    op = small_op()
    model = project(op, constant_basis(op.space))
    hist = enrich_online(model, [0.5], MarkingConfig(delta_online=1e9))
    assert len(hist.steps) == 1 and hist.steps[0].marked == []
    assert model.basis.total == 4


@pytest.mark.parametrize("strategy", ["uniform", "doerfler", "age", "combined"])
@pytest.mark.parametrize("estimator", ["flux", "residual"])
def test_enrichment_terminates_below_delta(strategy, estimator):
    op = small_op(n=12, M=3)
    model = project(op, constant_basis(op.space))
    est = Estimator(model, estimator)
    first = est([0.5], solve_rom(model, [0.5]))[0]
    delta = _target(op, est, first)
    hist = enrich_online(model, [0.5], MarkingConfig(strategy, delta_online=delta), est)
    assert hist.steps[-1].estimate <= delta
    assert len(hist.steps) >= 2
    sizes = [s.sizes.sum() for s in hist.steps]
    assert np.all(np.diff(sizes) >= 0)
    # the history reflects the model
    assert np.array_equal(hist.final_sizes, model.basis.sizes)
    # reduced blocks stay consistent with a fresh projection
    fresh = project(op, model.basis)
    for q in range(op.num_terms):
        for k in fresh.blocks[q]:
            assert np.allclose(fresh.blocks[q][k], model.blocks[q][k], atol=1e-12)


def _target(op, est, first):
    """A quarter of the first estimate, lifted above the flux estimator's floor at u_h."""
    floor = flux_estimate(op, solve_fom(op, [0.5]).u, [0.5]).estimate if est.kind == "flux" else 0.0
    delta = max(first / 4, 1.25 * floor)
    assert delta < first
    return delta


class _Frozen(Estimator):
    def __call__(self, mu, coeffs):
        return 10.0, np.ones(self.model.op.space.num_blocks)


def test_frozen_estimate_raises_stagnation():
    op = small_op(n=12, M=3)
    model = project(op, constant_basis(op.space))
    with pytest.raises(NumericalError, match="stagnated"):
        enrich_online(model, [0.5], MarkingConfig("uniform", delta_online=1.0), _Frozen(model))


def test_step_cap_raises():
    op = small_op(n=12, M=3)
    model = project(op, constant_basis(op.space))
    with pytest.raises(NumericalError, match="cap"):
        enrich_online(model, [0.5], MarkingConfig("doerfler", delta_online=1e-12), max_steps=2)


def test_history_csv(tmp_path):
    op = small_op()
    model = project(op, constant_basis(op.space))
    est = Estimator(model)
    delta = _target(op, est, est([0.5], solve_rom(model, [0.5]))[0])
    hist = enrich_online(model, [0.5], MarkingConfig(delta_online=delta), est)
    lines = hist.to_csv(tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "step,mu,eta,marked,accepted,rejected,total_basis"
    assert len(lines) == len(hist.steps) + 1
    last = lines[-1].split(",")
    assert float(last[2]) <= delta and int(last[6]) == model.basis.total


def test_flux_estimator_requires_constants():
    from locmor.rom import coarse_basis, empty_basis
    op = small_op()
    with pytest.raises(ConfigurationError):
        Estimator(project(op, empty_basis(op.space)), "flux")
    with pytest.raises(ConfigurationError):
        Estimator(project(op, coarse_basis(op.space)), "hybrid")
