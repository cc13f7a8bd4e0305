"""Spectral greedy: one parameter-independent local space from per-parameter optimal spaces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError
from .forms import theta_bounds
from .linalg import dense, gram_schmidt, gram_schmidt_vector
from .rangefinder import RangefinderConfig, adaptive_randomized_range
from .transfer import (TransferSetup, assemble_transfer_matrix, local_source_solution,
                       transfer_eigs)


@dataclass
class GreedyConfig:
    training: list
    eps: float
    C1: float = 1.0
    C2: float = 1.0
    builder: str = "exact"  # or "randomized"
    with_rhs: bool = False
    stagnation: int = 3
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("greedy tolerance must be positive")
        if len(self.training) == 0:
            raise ConfigurationError("training set is empty")
        if self.builder not in ("exact", "randomized"):
            raise ConfigurationError(f"unknown space builder {self.builder!r}")


@dataclass
class ParameterSpace:
    """Functions spanning R_n^+(mu), scaled for the weighted-norm unit ball.

    Spectral modes keep their norm sqrt(lambda_j); source and kernel functions
    have unit norm.
    """
    mu: np.ndarray
    functions: np.ndarray
    eigenvalues: np.ndarray
    n: int


@dataclass
class GreedyResult:
    basis: np.ndarray
    chosen: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    thresholds: dict = field(default_factory=dict)
    final_deviations: dict = field(default_factory=dict)


def _unit(v, M):
    nrm = float(np.sqrt(max(v @ (M @ v), 0.0)))
    return v / nrm if nrm > 0 else None


def per_parameter_space(setup: TransferSetup, mu, eps, C1=1.0, builder="exact", with_rhs=False, seed=0):
    """Smallest n with sqrt(lambda_{n+1}) <= eps / (2 C1), plus source and kernel parts."""
    target = eps / (2.0 * C1)
    mu = setup.problem.check_param(mu)
    M_R = setup.M_R
    T = assemble_transfer_matrix(setup, mu)
    eig = transfer_eigs(setup, mu, T=T)
    lam = eig.eigenvalues
    if builder == "exact":
        below = np.flatnonzero(np.sqrt(lam) <= target)
        n = int(below[0]) if below.size else len(lam)
        modes = eig.modes[:, :n]
    else:
        res = adaptive_randomized_range(lambda z: T @ z, setup.M_S, M_R,
                                        RangefinderConfig(target, seed=seed))
        # weight the random basis by the singular values of its compression of T
        B = res.basis
        n = B.shape[1]
        if n:
            C = B.T @ (dense(M_R) @ T)
            w, V = np.linalg.eigh(C @ np.linalg.solve(dense(setup.M_S), C.T))
            order = np.argsort(w)[::-1]
            modes = B @ (V[:, order] * np.sqrt(np.maximum(w[order], 0.0)))
        else:
            modes = np.zeros((setup.num_range, 0))
    cols = [modes]
    extra = []
    if with_rhs:
        extra.append(local_source_solution(setup, mu))
    if setup.kernel:
        extra.append(setup.constant())
    for v in extra:
        u = _unit(v, M_R)
        if u is not None:
            cols.append(u[:, None])
    return ParameterSpace(mu, np.hstack(cols), lam, n)


def deviation(functions, basis, M_R):
    """Worst weighted-ball distance to span(basis): (E, worst function)."""
    X = np.asarray(functions, float)
    if X.shape[1] == 0:
        return 0.0, np.zeros(X.shape[0])
    MX = M_R @ X
    R = X - basis @ (basis.T @ MX) if basis is not None and basis.shape[1] else X
    Z = R.T @ (M_R @ R)
    w, V = np.linalg.eigh((Z + Z.T) / 2)
    return float(np.sqrt(max(w[-1], 0.0))), X @ V[:, -1]


def greedy_threshold(problem, mu, mu_bar, eps, C2=1.0):
    lo, hi = theta_bounds(problem, mu, mu_bar)
    return eps / (eps + 2.0 * C2 * np.sqrt(lo) * np.sqrt(hi))


def spectral_greedy(setup: TransferSetup, config: GreedyConfig, spaces=None):
    problem = setup.problem
    M_R = setup.M_R
    training = [problem.check_param(mu) for mu in config.training]
    if spaces is None:
        spaces = [per_parameter_space(setup, mu, config.eps, config.C1, config.builder,
                                      config.with_rhs, config.seed + i) for i, mu in enumerate(training)]
    thresholds = [greedy_threshold(problem, mu, setup.mu_bar, config.eps, config.C2) for mu in training]
    B = np.zeros((setup.num_range, 0))
    if setup.kernel:
        B, _ = gram_schmidt(setup.constant()[:, None], M_R)
    result = GreedyResult(B, thresholds={tuple(mu): t for mu, t in zip(training, thresholds)})
    best, since = np.inf, 0
    for _ in range(config.max_iter):
        devs = [deviation(sp.functions, B, M_R) for sp in spaces]
        E = np.array([d[0] for d in devs])
        result.trace.append(float(E.max()))
        if np.all(E <= np.array(thresholds)):
            break
        if E.max() < best * (1 - 1e-12):
            best, since = E.max(), 0
        else:
            since += 1
            if since >= config.stagnation:
                raise NumericalError("spectral greedy stagnated", residual=float(E.max()))
        k = int(np.argmax(E))
        w = gram_schmidt_vector(B, devs[k][1], M_R)
        if w is None:
            raise NumericalError("spectral greedy produced a dependent function", residual=float(E.max()))
        B = np.column_stack([B, w])
        result.chosen.append(training[k])
    else:
        raise NumericalError("spectral greedy hit the iteration cap", residual=result.trace[-1])
    result.basis = B
    result.final_deviations = {tuple(sp.mu): deviation(sp.functions, B, M_R)[0] for sp in spaces}
    return result
