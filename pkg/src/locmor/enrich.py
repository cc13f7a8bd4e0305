"""Online adaptive enrichment: solve, estimate, mark, refine."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse.linalg as spla

from .errest import (ResidualOnline, coercivity_oracle, flux_estimate, has_constants)
from .errors import ConfigurationError, NumericalError
from .rom import ReducedModel, extend_basis, reconstruct, solve_rom

STRATEGIES = ("uniform", "doerfler", "age", "combined")
ESTIMATORS = ("flux", "residual")


@dataclass(frozen=True)
class MarkingConfig:
    strategy: str = "combined"
    theta_doerf: float = 0.85
    n_age: int = 4
    theta_uni: float = 10.0
    delta_online: float = 1.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown marking strategy {self.strategy!r}")
        if not 0.0 < self.theta_doerf <= 1.0:
            raise ConfigurationError("theta_doerf must lie in (0, 1]")
        if int(self.n_age) != self.n_age or self.n_age < 1:
            raise ConfigurationError("n_age must be a positive integer")
        if self.theta_uni < 1.0:
            raise ConfigurationError("theta_uni must be >= 1")
        if not self.delta_online > 0.0:
            raise ConfigurationError("delta_online must be positive")


def doerfler(indicators, theta):
    """Smallest set carrying theta^2 of the squared indicator sum (ties by index)."""
    eta = np.asarray(indicators, float)
    order = sorted(range(len(eta)), key=lambda m: (-eta[m], m))
    target = theta ** 2 * float((eta ** 2).sum())
    acc, out = 0.0, []
    for m in order:
        out.append(m)
        acc += eta[m] ** 2
        if acc >= target:
            break
    return out


def mark(indicators, config: MarkingConfig, ages=None, estimate=None):
    """Marked subdomain indices, sorted.

    ``ages`` counts consecutive unmarked steps per subdomain; ``estimate``
    defaults to the root sum of squares of the indicators.
    """
    eta = np.asarray(indicators, float)
    if np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ConfigurationError("indicators must be finite and non-negative")
    total = float(np.sqrt((eta ** 2).sum())) if estimate is None else float(estimate)
    ages = np.zeros(len(eta), int) if ages is None else np.asarray(ages)
    if total > 0 and not np.any(eta > 0):
        raise NumericalError("estimate is positive but every indicator vanishes")
    if total == 0:
        return []
    s = config.strategy
    if s == "uniform" or (s == "combined" and total > config.theta_uni * config.delta_online):
        return list(range(len(eta)))
    marked = set()
    if s in ("doerfler", "combined"):
        marked |= set(doerfler(eta, config.theta_doerf))
    if s in ("age", "combined"):
        marked |= set(np.flatnonzero(ages >= config.n_age).tolist())
        if s == "age" and not marked:
            marked.add(int(np.argmax(eta)))
    return sorted(marked)


def closure_patch(dd, m):
    """Subdomain m and every subdomain sharing at least a corner with it."""
    I, J = dd.subdomain_ij(m)
    return [dd.subdomain_index(i, j)
            for j in range(max(J - 1, 0), min(J + 2, dd.My))
            for i in range(max(I - 1, 0), min(I + 2, dd.Mx))]


class CorrectionSolver:
    """Patch solves on the global block matrix restricted to closure patches."""

    def __init__(self, op):
        self.op = op
        self._mu = None
        self._A = None
        self._lu = {}

    def _set_mu(self, mu):
        key = tuple(np.atleast_1d(mu).tolist())
        if key != self._mu:
            self._mu = key
            self._A = self.op.assemble(mu).tocsr()
            self._f = self.op.rhs_vector(mu)
            self._lu = {}

    def dofs(self, m):
        s = self.op.space
        return np.concatenate([np.arange(s.offsets[k], s.offsets[k + 1]) for k in closure_patch(s.dd, m)])

    def correction(self, u, mu, m):
        self._set_mu(mu)
        idx = self.dofs(m)
        if m not in self._lu:
            self._lu[m] = spla.splu(self._A[idx][:, idx].tocsc())
        r = (self._f - self._A @ u)[idx]
        phi = np.zeros_like(u)
        phi[idx] = self._lu[m].solve(r)
        return phi


def local_correction(op, u, mu, m, solver=None):
    """(phi + u)|_{Omega_m} with phi solving the residual equation on the closure patch of m."""
    solver = CorrectionSolver(op) if solver is None else solver
    phi = solver.correction(np.asarray(u, float), op.problem.check_param(mu), m)
    return op.space.restrict(m, phi + u)


@dataclass
class EnrichmentStep:
    step: int
    mu: np.ndarray
    estimate: float
    marked: list
    accepted: int
    rejected: int
    sizes: np.ndarray


@dataclass
class EnrichmentHistory:
    steps: list = field(default_factory=list)
    delta_online: float = 0.0

    @property
    def final_sizes(self):
        return self.steps[-1].sizes if self.steps else None

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "mu", "eta", "marked", "accepted", "rejected", "total_basis"])
            for s in self.steps:
                w.writerow([s.step, ";".join(f"{v:.17g}" for v in s.mu), f"{s.estimate:.17g}",
                            len(s.marked), s.accepted, s.rejected, int(s.sizes.sum())])
        return path


class Estimator:
    """Estimate plus indicators for a reduced solution; kept in sync with basis updates."""

    def __init__(self, model: ReducedModel, kind="flux", alpha=None, c_N=1.0):
        if kind not in ESTIMATORS:
            raise ConfigurationError(f"unknown estimator {kind!r}")
        self.model, self.kind = model, kind
        self.c_N = c_N
        self.alpha = alpha
        if kind == "residual":
            self.online = ResidualOnline(model)
        elif not has_constants(model.basis).all():
            raise ConfigurationError("flux estimator needs constants in every local basis")

    def __call__(self, mu, coeffs):
        if self.kind == "flux":
            u = reconstruct(self.model.basis, coeffs)
            rep = flux_estimate(self.model.op, u, mu, basis=self.model.basis)
            return rep.estimate, rep.indicators
        alpha = self.alpha if self.alpha is not None else coercivity_oracle(self.model.op, mu)[0]
        eta = self.online.indicators(mu, coeffs)
        return self.c_N / alpha * float(np.sqrt((eta ** 2).sum())), eta

    def extended(self, m):
        if self.kind == "residual":
            self.online.update(m, with_neighbors=True)


def enrich_online(model: ReducedModel, mu, config: MarkingConfig, estimator="flux", history=None,
                  max_steps=200, stagnation=5, ages=None, alpha=None, c_N=1.0):
    """Enrich ``model`` in place until the estimate for ``mu`` drops below delta_online.

    ``estimator`` is a kind name or an existing Estimator (reused across
    parameters). Returns the history, appended to when one is passed in.
    """
    op = model.op
    mu = op.problem.check_param(mu)
    est = estimator if isinstance(estimator, Estimator) else Estimator(model, estimator, alpha, c_N)
    history = EnrichmentHistory(delta_online=config.delta_online) if history is None else history
    ages = np.zeros(op.space.num_blocks, int) if ages is None else ages
    solver = CorrectionSolver(op)
    recent = []
    for step in range(max_steps + 1):
        coeffs = solve_rom(model, mu)
        eta, ind = est(mu, coeffs)
        record = EnrichmentStep(len(history.steps), mu.copy(), eta, [], 0, 0, model.basis.sizes.copy())
        history.steps.append(record)
        if eta <= config.delta_online:
            return history
        if step == max_steps:
            break
        recent.append(eta)
        # the estimator is not monotone under enrichment, so only a frozen value counts as stagnation
        if len(recent) > stagnation and abs(recent[-stagnation - 1] - eta) < 1e-12 * eta:
            raise NumericalError(f"enrichment stagnated at eta = {eta:.6g}", residual=eta)
        marked = mark(ind, config, ages, eta)
        u = reconstruct(model.basis, coeffs)
        accepted = _refine(model, est, solver, u, mu, marked)
        if not accepted and len(marked) < op.space.num_blocks:
            # every candidate was already representable: widen to all subdomains
            marked = list(range(op.space.num_blocks))
            accepted = _refine(model, est, solver, u, mu, marked)
        if not accepted:
            raise NumericalError(f"no admissible extension at eta = {eta:.6g}", residual=eta)
        record.marked = marked
        record.accepted = len(accepted)
        record.rejected = len(marked) - len(accepted)
        hit = np.zeros(len(ages), bool)
        hit[marked] = True
        ages[hit] = 0
        ages[~hit] += 1
    raise NumericalError(f"enrichment hit the {max_steps}-step cap at eta = {eta:.6g}", residual=eta)


def _refine(model, est, solver, u, mu, marked):
    op = model.op
    candidates = [(m, local_correction(op, u, mu, m, solver)) for m in marked]
    accepted = []
    for m, c in candidates:
        if extend_basis(model, m, c):
            est.extended(m)
            accepted.append(m)
    return accepted
