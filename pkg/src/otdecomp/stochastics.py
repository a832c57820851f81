"""Binomial / multinomial moment formulas and their Monte-Carlo checks."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln

from .decomposition import EnvelopeSequence
from .errors import ValidationError
from .measures import SeedLike, _as_rng

EXACT_PMF_MAX_N = 10_000


class Estimate(NamedTuple):
    estimate: float
    bound: float
    stderr: float = 0.0


def _check_binomial(n: int, p: float) -> None:
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n}")
    if not 0 < p <= 1:
        raise ValidationError(f"p must lie in (0, 1], got {p}")


def binomial_log_pmf(n: int, p: float) -> np.ndarray:
    """``log P(N = k)`` for ``k = 0..n``, computed in log space."""
    k = np.arange(n + 1)
    if p == 1.0:
        return np.where(k == n, 0.0, -np.inf)
    log_comb = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return log_comb + k * math.log(p) + (n - k) * math.log1p(-p)


def binomial_pmf(n: int, p: float) -> np.ndarray:
    return np.exp(binomial_log_pmf(n, p))


def inverse_binomial_moment_exact(n: int, p: float) -> float:
    """``E[1/(N+1)] = (1 - (1-p)**(n+1)) / ((n+1) p)`` for ``N ~ Bin(n, p)``."""
    _check_binomial(n, p)
    return -math.expm1((n + 1) * math.log1p(-p)) / ((n + 1) * p) if p < 1 else 1.0 / (n + 1)


def inverse_binomial_bound(n: int, p: float) -> float:
    _check_binomial(n, p)
    return 1.0 / (n * p)


def truncated_inverse_moment(n: int, p: float, alpha: float, reps: int = 10_000,
                             seed: SeedLike = 0) -> Estimate:
    """``E[1(N > 0) N**-alpha]`` next to the bound ``2 (n p)**-alpha``.

    Exact pmf summation up to ``n = 10**4``, Monte Carlo above.
    """
    _check_binomial(n, p)
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    bound = 2.0 * (n * p) ** (-alpha)
    if n <= EXACT_PMF_MAX_N:
        pmf = binomial_pmf(n, p)
        k = np.arange(1, n + 1)
        return Estimate(float(np.dot(pmf[1:], k ** (-alpha))), bound)
    N = _as_rng(seed).binomial(n, p, size=reps)
    vals = np.where(N > 0, np.maximum(N, 1).astype(float) ** (-alpha), 0.0)
    return Estimate(float(vals.mean()), bound, float(vals.std(ddof=1) / math.sqrt(reps)))


def sample_mean_bound(p_moment: float, n: int, centered_pth: float) -> float:
    """``(2 E|X - EX|**p)**(1/p) * n**(-(p-1)/p)`` for ``1 < p <= 2``."""
    if not 1 < p_moment <= 2:
        raise ValidationError("moment order must lie in (1, 2]")
    if centered_pth < 0:
        raise ValidationError("centered moment must be nonnegative")
    return (2.0 * centered_pth) ** (1.0 / p_moment) * n ** (-(p_moment - 1.0) / p_moment)


def multinomial_l1_deviation(a, c, envelope: EnvelopeSequence, gamma: float, n: int,
                             reps: int = 10_000, seed: SeedLike = 0) -> Estimate:
    """Monte-Carlo ``E sum_l c_l |N_l/n - a_l|`` and the bound
    ``3 sqrt(rho) (sum_l c_l b_l**(1-gamma)) n**-gamma``."""
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if a.shape != c.shape or np.any(a < 0) or abs(a.sum() - 1.0) > 1e-9:
        raise ValidationError("a must be a probability vector matching c")
    if not 0 < gamma <= 0.5:
        raise ValidationError("gamma must lie in (0, 1/2]")
    envelope.check_dominates(a)
    rho = envelope.rho(n)
    bound = 3.0 * math.sqrt(rho) * float(np.dot(c, envelope.b ** (1.0 - gamma))) * n ** (-gamma)
    N = _as_rng(seed).multinomial(n, a / a.sum(), size=reps)
    dev = np.abs(N / n - a[None, :]) @ c
    return Estimate(float(dev.mean()), bound, float(dev.std(ddof=1) / math.sqrt(reps)))


def binomial_mean_abs_deviation(n: int, p: float) -> float:
    """Exact ``E|N/n - p|`` by pmf summation."""
    pmf = binomial_pmf(n, p)
    k = np.arange(n + 1)
    return float(np.dot(pmf, np.abs(k / n - p)))


def pareto_centered_moment(q: float, order: float) -> float:
    """``E|X - EX|**order`` for the Pareto law with cdf ``1 - t**-q`` on ``[1, inf)``."""
    from scipy.integrate import quad

    if not q > max(1.0, order):
        raise ValidationError("need q > max(1, order) for a finite centered moment")
    mean = q / (q - 1.0)

    def integrand(t):
        return abs(t - mean) ** order * q * t ** (-q - 1.0)

    left, _ = quad(integrand, 1.0, mean, epsabs=0, epsrel=1e-11)
    right, _ = quad(integrand, mean, np.inf, epsabs=0, epsrel=1e-11, limit=200)
    return left + right


def sample_mean_deviation_pareto(q: float, p_moment: float, n: int, reps: int = 10_000,
                                 seed: SeedLike = 0) -> Estimate:
    """Monte-Carlo ``E|mean - EX|`` for Pareto(q) next to the sample-mean bound."""
    if not q > p_moment:
        raise ValidationError("need q > p for a finite p-th moment")
    rng = _as_rng(seed)
    mean = q / (q - 1.0)
    u = 1.0 - rng.random((reps, n))
    dev = np.abs((u ** (-1.0 / q)).mean(axis=1) - mean)
    bound = sample_mean_bound(p_moment, n, pareto_centered_moment(q, p_moment))
    return Estimate(float(dev.mean()), bound, float(dev.std(ddof=1) / math.sqrt(reps)))
