"""Adaptive randomized range approximation with a probabilistic norm estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, NumericalError
from .linalg import dense, gram_schmidt, gram_schmidt_vector


def inv_erf(y):
    """Inverse error function by safeguarded Newton iteration on ``math.erf``.

    For y > 1/2 the complementary function is used so that the tail is resolved.
    """
    y = float(y)
    if not -1.0 < y < 1.0:
        raise DomainError(f"inv_erf needs |y| < 1, got {y}")
    if y == 0.0:
        return 0.0
    sign, y = (1.0, y) if y > 0 else (-1.0, -y)
    if y > 0.5:
        target = 1.0 - y

        def resid(x):
            return target - math.erfc(x)
    else:
        def resid(x):
            return math.erf(x) - y
    lo, hi = 0.0, 1.0
    while resid(hi) < 0:
        lo, hi = hi, 2.0 * hi
    # series start, accurate for small y
    x = 0.5 * math.sqrt(math.pi) * y * (1.0 + math.pi * y * y / 12.0)
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(200):
        fx = resid(x)
        if fx == 0.0:
            break
        if fx > 0:
            hi = x
        else:
            lo = x
        x_new = x - fx / (2.0 / math.sqrt(math.pi) * math.exp(-x * x))
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-16 * abs(x):
            x = x_new
            break
        x = x_new
    return sign * x


def c_est(n_t, eps_testfail, lambda_min_source):
    if lambda_min_source <= 0:
        raise ConfigurationError("source product must be positive definite")
    if not 0.0 < eps_testfail < 1.0 or n_t < 1:
        raise ConfigurationError("need n_t >= 1 and 0 < eps_testfail < 1")
    return 1.0 / (math.sqrt(2.0 * lambda_min_source) * inv_erf(eps_testfail ** (1.0 / n_t)))


def box_muller(rng: np.random.Generator, shape):
    """Standard normal samples from pairs of uniforms."""
    n = int(np.prod(shape))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # in (0, 1]
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    return z.reshape(shape)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class RangefinderConfig:
    tol: float
    n_t: int = 10
    eps_algofail: float = 1e-10
    N_T_upper: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigurationError("tol must be positive")
        if self.n_t < 1:
            raise ConfigurationError("n_t must be at least 1")
        if not 0.0 < self.eps_algofail < 1.0:
            raise ConfigurationError("eps_algofail must lie in (0, 1)")


@dataclass
class RangefinderResult:
    basis: np.ndarray
    iterations: int
    estimates: list = field(default_factory=list)
    c_est: float = 0.0
    seed: int = 0
    rejected: int = 0

    @property
    def size(self):
        return self.basis.shape[1]


def norm_estimator(test_vectors, c, M_R=None):
    """c times the largest range norm among the (projected) test vectors."""
    T = np.atleast_2d(np.asarray(test_vectors, float))
    if T.size == 0:
        return 0.0
    if T.ndim == 2 and T.shape[0] == 1 and np.ndim(test_vectors) == 1:
        T = T.T
    if M_R is None:
        norms = np.sqrt((T * T).sum(axis=0))
    else:
        norms = np.sqrt(np.maximum((T * (M_R @ T)).sum(axis=0), 0.0))
    return float(c * norms.max())


def smallest_eigenvalue(M):
    return float(np.linalg.eigvalsh(dense(M))[0])


def adaptive_randomized_range(apply_T, M_S, M_R, config: RangefinderConfig, rng=None):
    """Grow a basis of random samples of T until the norm estimator drops below tol.

    ``apply_T`` maps source coefficient arrays (N_S or N_S x k) to range arrays.
    """
    n_s, n_r = M_S.shape[0], M_R.shape[0]
    nt_upper = config.N_T_upper or min(n_s, n_r)
    eps_testfail = config.eps_algofail / nt_upper
    c = c_est(config.n_t, eps_testfail, smallest_eigenvalue(M_S))
    rng = make_rng(config.seed) if rng is None else rng
    tests = np.asarray(apply_T(box_muller(rng, (n_s, config.n_t))), float).reshape(n_r, config.n_t)
    B = np.zeros((n_r, 0))
    est = norm_estimator(tests, c, M_R)
    estimates = [est]
    iterations = rejected = 0
    while est > config.tol:
        if B.shape[1] >= n_r:
            break
        iterations += 1
        v = np.asarray(apply_T(box_muller(rng, (n_s,))), float).reshape(n_r)
        w = gram_schmidt_vector(B, v, M_R)
        if w is None:
            rejected += 1
            if rejected > nt_upper:
                raise NumericalError("randomized range: too many rejected samples", residual=est)
            continue
        B = np.column_stack([B, w])
        tests = tests - B @ (B.T @ (M_R @ tests))
        est = norm_estimator(tests, c, M_R)
        estimates.append(est)
    return RangefinderResult(B, iterations, estimates, c, config.seed, rejected)


def randomized_range(apply_T, n_s, M_R, n, rng):
    """Fixed-size variant: orthonormalized images of n random source vectors."""
    samples = np.asarray(apply_T(box_muller(rng, (n_s, n))), float)
    B, _ = gram_schmidt(samples.reshape(-1, n), M_R)
    return B


def product_constant(M_R, M_S, range_restrict=None):
    """C_RS = sqrt(lmax_R / lmin_R) * sqrt(lmax_S * lmin_S)."""
    r = np.linalg.eigvalsh(dense(M_R) if range_restrict is None else range_restrict)
    s = np.linalg.eigvalsh(dense(M_S))
    return float(np.sqrt(r[-1] / r[0]) * np.sqrt(s[-1] * s[0]))


def apriori_mean_bound(lambdas, n, c_rs=1.0):
    """Expected-error bound for n random samples given the transfer eigenvalues."""
    if n < 4:
        raise DomainError("the a priori mean bound needs n >= 4")
    lam = np.maximum(np.asarray(lambdas, float), 0.0)
    best = np.inf
    for k in range(2, n - 1):
        p = n - k
        lk1 = lam[k] if k < lam.size else 0.0
        tail = lam[k:].sum()
        val = (1 + math.sqrt(k / (p - 1))) * math.sqrt(lk1) + math.e * math.sqrt(n) / p * math.sqrt(tail)
        best = min(best, val)
    return float(c_rs * best)
