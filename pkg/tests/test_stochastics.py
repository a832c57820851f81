import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from otdecomp.decomposition import EnvelopeSequence
from otdecomp.errors import EnvelopeViolation, ValidationError
from otdecomp.stochastics import (
    binomial_mean_abs_deviation,
    binomial_pmf,
    inverse_binomial_bound,
    inverse_binomial_moment_exact,
    multinomial_l1_deviation,
    pareto_centered_moment,
    sample_mean_bound,
    sample_mean_deviation_pareto,
    truncated_inverse_moment,
)


def pmf_sum(n, p, fn):
    return math.fsum(math.comb(n, k) * p ** k * (1 - p) ** (n - k) * fn(k) for k in range(n + 1))


def test_inverse_moment_examples():
    assert inverse_binomial_moment_exact(1, 0.5) == pytest.approx(0.75, abs=1e-15)
    assert inverse_binomial_moment_exact(2, 1.0) == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("n", range(1, 31))
def test_inverse_moment_matches_pmf(n):
    for p in np.arange(1, 10) / 10:
        exact = pmf_sum(n, p, lambda k: 1.0 / (k + 1))
        assert abs(inverse_binomial_moment_exact(n, p) - exact) <= 1e-12
        assert inverse_binomial_moment_exact(n, p) <= inverse_binomial_bound(n, p)


def test_pmf_sums_to_one_and_degenerate():
    assert binomial_pmf(50, 0.3).sum() == pytest.approx(1.0, abs=1e-12)
    assert list(binomial_pmf(3, 1.0)) == [0.0, 0.0, 0.0, 1.0]


def test_invalid_binomial():
    with pytest.raises(ValidationError):
        inverse_binomial_moment_exact(0, 0.5)
    with pytest.raises(ValidationError):
        inverse_binomial_moment_exact(3, 0.0)


def test_truncated_inverse_examples():
    est = truncated_inverse_moment(10, 0.5, 0.5)
    exact = pmf_sum(10, 0.5, lambda k: k ** -0.5 if k > 0 else 0.0)
    assert est.estimate == pytest.approx(exact, abs=1e-12)
    assert est.bound == pytest.approx(2 * 5 ** -0.5)
    assert est.estimate <= est.bound
    det = truncated_inverse_moment(20, 1.0, 0.3)
    assert det.estimate == pytest.approx(20 ** -0.3)


def test_truncated_inverse_monte_carlo_branch():
    est = truncated_inverse_moment(50_000, 0.01, 0.5, reps=4000, seed=3)
    assert est.stderr > 0
    assert est.estimate <= est.bound + 3 * est.stderr


@given(st.integers(1, 3000), st.floats(0.001, 1.0), st.floats(0.01, 0.99))
def test_truncated_inverse_bound_holds(n, p, alpha):
    est = truncated_inverse_moment(n, p, alpha)
    assert est.estimate <= est.bound + 1e-9


def test_truncated_bound_decreasing_in_np():
    bounds = [truncated_inverse_moment(n, 0.5, 0.4).bound for n in (10, 20, 40)]
    assert bounds[0] > bounds[1] > bounds[2]


def test_sample_mean_bound_examples():
    assert sample_mean_bound(1.5, 10, 0.0) == 0.0
    assert sample_mean_bound(2.0, 4, 1.0) == pytest.approx(math.sqrt(2) / 2)
    # Rademacher check: E|mean of 4 signs| = E|2 Bin(4, 1/2)/4 - 1|
    rademacher = pmf_sum(4, 0.5, lambda k: abs(2 * k / 4 - 1))
    assert rademacher <= sample_mean_bound(2.0, 4, 1.0)
    assert sample_mean_bound(1.5, 20, 2.0) < sample_mean_bound(1.5, 10, 2.0)
    with pytest.raises(ValidationError):
        sample_mean_bound(2.5, 10, 1.0)


def test_pareto_centered_moment_second_order():
    q = 3.0
    var = q / ((q - 1) ** 2 * (q - 2))
    assert pareto_centered_moment(q, 2.0) == pytest.approx(var, rel=1e-8)


def test_multinomial_degenerate():
    env = EnvelopeSequence(np.array([1.0, 0.5, 0.25]))
    est = multinomial_l1_deviation([1.0, 0.0, 0.0], [1.0, 2.0, 4.0], env, 0.5, 100, reps=200, seed=0)
    assert est.estimate == 0.0


def test_multinomial_two_layers_against_pmf():
    env = EnvelopeSequence(np.array([0.5, 0.5]))
    est = multinomial_l1_deviation([0.5, 0.5], [1.0, 1.0], env, 0.5, 100, reps=20_000, seed=1)
    exact = 2 * binomial_mean_abs_deviation(100, 0.5)
    assert abs(est.estimate - exact) <= 4 * est.stderr
    assert est.estimate <= est.bound


def test_multinomial_bound_scaling():
    env = EnvelopeSequence(np.array([0.6, 0.3, 0.1]))
    a, c = [0.6, 0.3, 0.1], [1.0, 2.0, 4.0]
    b1 = multinomial_l1_deviation(a, c, env, 0.4, 100, reps=50, seed=0).bound
    b4 = multinomial_l1_deviation(a, c, env, 0.4, 400, reps=50, seed=0).bound
    # rho(n) = 1 at both sizes here, so the ratio is the pure power law
    assert env.rho(100) == env.rho(400) == 1.0
    assert b4 / b1 == pytest.approx(4 ** -0.4)


def test_multinomial_envelope_violation():
    env = EnvelopeSequence(np.array([0.4, 0.4]))
    with pytest.raises(EnvelopeViolation):
        multinomial_l1_deviation([0.6, 0.4], [1.0, 1.0], env, 0.5, 10, reps=10)


@pytest.mark.parametrize("seed", range(10))
def test_multinomial_bound_randomized(seed):
    rng = np.random.default_rng(seed)
    for _ in range(20):
        L = int(rng.integers(1, 8))
        a = np.sort(rng.dirichlet(np.ones(L)))[::-1]
        b = np.maximum.accumulate((a * (1 + rng.random(L)))[::-1])[::-1]
        c = 2.0 ** np.arange(L) * rng.uniform(0.5, 2)
        est = multinomial_l1_deviation(a, c, EnvelopeSequence(b), float(rng.uniform(0.05, 0.5)),
                                       int(rng.integers(1, 2000)), reps=500, seed=rng)
        assert est.estimate <= est.bound + 3 * est.stderr


@pytest.mark.parametrize("seed", range(5))
def test_pareto_sample_mean_bound(seed):
    rng = np.random.default_rng(seed)
    for _ in range(10):
        q = float(rng.uniform(1.3, 4.0))
        p = float(rng.uniform(1.05, min(2.0, q - 0.15)))
        est = sample_mean_deviation_pareto(q, p, int(rng.integers(2, 200)), reps=2000, seed=rng)
        assert est.estimate <= est.bound + 3 * est.stderr
