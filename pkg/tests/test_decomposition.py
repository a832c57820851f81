import numpy as np
import pytest
from hypothesis import given, strategies as st

from otdecomp.decomposition import (
    EnvelopeSequence,
    canonical_envelope,
    canonical_pivot,
    composite_bound_from_samples,
    composition_bound,
    composition_plan,
    default_offset,
    dyadic_index,
    empirical_composite_bound,
    envelope_constant,
    ipm_composition_check,
    layer_decompose,
    layer_moment_check,
    two_stage_sample,
)
from otdecomp.errors import EnvelopeViolation, LayerMismatch, MassMismatch, OffsetTooSmall
from otdecomp.exact_ot import TransportPlan, ot_value, solve_discrete
from otdecomp.measures import euclidean_power, make_discrete, marginal_costs


def random_measure(rng, n, d, scale=1.0):
    w = rng.random(n) + 0.05
    return make_discrete(rng.normal(size=(n, d)) * scale, w / w.sum())


def multiscale_measure(rng, n_per=3, scales=(0.2, 2.5, 20.0)):
    pts, w = [], []
    for s in scales:
        pts.append(rng.normal(size=(n_per, 1)) * 0.1 * s + s)
        w.append(rng.random(n_per) + 0.1)
    w = np.concatenate(w)
    return make_discrete(np.vstack(pts), w / w.sum())


def test_dyadic_index_exact():
    assert list(dyadic_index([1.0, 1.999, 2.0, 3.5, 4.0, 5.0, 7.99, 8.0])) == [0, 0, 1, 1, 2, 2, 2, 3]


def test_single_band():
    mu = make_discrete([[0.5], [0.6]])
    nu = make_discrete([[0.7], [0.8]])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, nu, cost)
    dec = layer_decompose(plan, mu, nu, cost, offset=0.0)
    assert dec.indices == [1]
    assert dec.masses[0] == pytest.approx(1.0)


def test_point_pair_layer_index():
    # c_X(1) = 2, c_Y(1.5) = 3, sum 5 lies in [4, 8)
    mu, nu = make_discrete([[1.0]]), make_discrete([[1.5]])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, nu, cost)
    dec = layer_decompose(plan, mu, nu, cost, offset=0.0)
    assert dec.indices == [2]
    assert dec.radii[0] == 8.0


def test_offset_too_small():
    mu, nu = make_discrete([[0.0]]), make_discrete([[0.1]])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, nu, cost)
    with pytest.raises(OffsetTooSmall):
        layer_decompose(plan, mu, nu, cost, offset=0.0)
    assert default_offset(mu, nu, cost) == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(15))
def test_partition_radius_and_restriction(seed):
    rng = np.random.default_rng(seed)
    mu, nu = multiscale_measure(rng), multiscale_measure(rng)
    cost = euclidean_power(1.0 + rng.random())
    plan, _ = solve_discrete(mu, nu, cost)
    dec = layer_decompose(plan, mu, nu, cost)
    assert dec.masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(dec.reconstruct(), plan.dense(), atol=1e-12)
    cx = marginal_costs(cost, "X", mu.points) + dec.offset
    cy = marginal_costs(cost, "Y", nu.points) + dec.offset
    for k, layer in enumerate(dec.layers):
        pair = cx[layer.rows] + cy[layer.cols]
        assert np.all(pair >= 2.0 ** layer.index)
        assert np.all(pair < layer.radius)
        assert layer.radius == 2.0 ** (layer.index + 1)
        sub, mk, nk = dec.sub_plan(k, cost)
        assert sub.value == pytest.approx(ot_value(mk, nk, cost), rel=1e-8, abs=1e-12)


def test_truncated_layer_mass_moves_up():
    mu = make_discrete([[0.1], [5.0]], [1 - 1e-16, 1e-16])
    nu = make_discrete([[0.1], [5.0]], [1 - 1e-16, 1e-16])
    cost = euclidean_power(1)
    plan = TransportPlan(np.array([0, 1]), np.array([0, 1]), np.array([1 - 1e-16, 1e-16]), 0.0, (2, 2))
    dec = layer_decompose(plan, mu, nu, cost)
    assert len(dec.layers) == 1
    assert np.allclose(dec.reconstruct(), plan.dense(), atol=1e-12)


def test_composition_bound_examples():
    assert composition_bound([0.3, 0.7], [0.3, 0.7], [1.0, 2.0], [4.0, 8.0]) == pytest.approx(1.7)
    assert composition_bound([1, 0], [0, 1], [0, 0], [1, 2]) == pytest.approx(12.0)


def test_composition_plan_examples():
    cost = euclidean_power(1)
    m1, n1 = make_discrete([[0.0], [1.0]]), make_discrete([[0.5], [2.0]])
    plan, mu, nu = composition_plan([1.0], [m1], [1.0], [n1], cost)
    assert plan.value == pytest.approx(ot_value(m1, n1, cost))
    m2, n2 = make_discrete([[3.0]]), make_discrete([[4.0]])
    plan, mu, nu = composition_plan([1.0, 0.0], [m1, m2], [0.0, 1.0], [n1, n2], cost)
    expect = np.zeros((3, 3))
    expect[:2, 2] = 0.5
    assert np.allclose(plan.dense(), expect)
    with pytest.raises(MassMismatch):
        composition_plan([0.6, 0.5], [m1, m2], [0.5, 0.5], [n1, n2], cost)


def _random_components(rng, L, d, cost):
    mus, nus, radii = [], [], []
    for _ in range(L):
        scale = 2.0 ** rng.integers(-1, 5)
        mk = random_measure(rng, int(rng.integers(1, 6)), d, scale)
        nk = random_measure(rng, int(rng.integers(1, 6)), d, scale)
        r = max(marginal_costs(cost, "X", mk.points).max(), marginal_costs(cost, "Y", nk.points).max())
        mus.append(mk)
        nus.append(nk)
        radii.append(r)
    return mus, nus, np.array(radii)


@given(st.integers(0, 2**32 - 1))
def test_composition_plan_feasible_and_bounded(seed):
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, 5))
    d = int(rng.integers(1, 3))
    cost = euclidean_power(float(rng.choice([1.0, 2.0])))
    mus, nus, radii = _random_components(rng, L, d, cost)
    a = rng.dirichlet(np.ones(L))
    b = rng.dirichlet(np.ones(L))
    plan, mu, nu = composition_plan(a, mus, b, nus, cost)
    assert np.allclose(plan.row_sums(), mu.weights, atol=1e-10)
    assert np.allclose(plan.col_sums(), nu.weights, atol=1e-10)
    subs = [ot_value(m, n, cost) for m, n in zip(mus, nus)]
    bound = composition_bound(a, b, subs, radii)
    assert plan.value <= bound * (1 + 1e-12) + 1e-12
    assert ot_value(mu, nu, cost) <= plan.value + 1e-9


def test_envelope_validation():
    with pytest.raises(EnvelopeViolation):
        EnvelopeSequence(np.array([0.1, 0.2]))
    env = EnvelopeSequence(np.array([0.5, 0.3]))
    with pytest.raises(EnvelopeViolation):
        env.check_dominates([0.6, 0.2])
    env.check_dominates([0.5, 0.3])


def test_envelope_rho_simple():
    env = EnvelopeSequence(np.array([0.5, 0.5]))
    assert env.rho(2) == 1.0
    assert env.rho(1) == 1.0
    # n = 4: either the head needs 1/(4*0.5) <= rho or the tail 4*0.5 <= rho
    assert env.rho(4) == 1.0


@pytest.mark.parametrize("exponent", [0.5, 0.8, 1.0])
def test_canonical_pivot_within_half_band(exponent):
    K = 3.7
    for n in np.unique(np.logspace(0, 6, 300).astype(int)):
        b = canonical_envelope(K, exponent, [canonical_pivot(K, exponent, n)])[0]
        assert 1 / (2 * n) <= b * (1 + 1e-12) and b <= (1 / n) * (1 + 1e-12)


@pytest.mark.parametrize("exponent", [1.2, 1.5, 2.0])
def test_canonical_pivot_band_for_large_exponent(exponent):
    # for exponents above one the pivot only guarantees 2**-e / n <= b <= 1/n
    K = 3.7
    for n in np.unique(np.logspace(0, 6, 300).astype(int)):
        b = canonical_envelope(K, exponent, [canonical_pivot(K, exponent, n)])[0]
        assert 2.0 ** -exponent / n <= b * (1 + 1e-12) and b <= (1 / n) * (1 + 1e-12)


def test_layer_masses_below_canonical_envelope():
    rng = np.random.default_rng(5)
    for _ in range(10):
        mu, nu = multiscale_measure(rng), multiscale_measure(rng)
        cost = euclidean_power(1.0)
        plan, _ = solve_discrete(mu, nu, cost)
        dec = layer_decompose(plan, mu, nu, cost)
        for e in (1.2, 1.5, 2.0):
            masses, env = layer_moment_check(dec, cost, e)
            assert np.all(masses <= env)
    assert envelope_constant(make_discrete([[0.0]]), make_discrete([[0.0]]), euclidean_power(1), 2.0, 1.0) == 32.0


def test_two_stage_single_layer_and_pooling():
    mu = make_discrete([[0.5], [0.6]])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, mu, cost)
    dec = layer_decompose(plan, mu, mu, cost, offset=0.0)
    s = two_stage_sample(dec, "X", 37, 1)
    assert list(s.counts) == [37]
    assert s.pooled.size == 37 and np.allclose(s.pooled.weights, 1 / 37)


def test_two_stage_counts_concentrate():
    mu = make_discrete([[0.1], [10.0]], [0.5, 0.5])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, mu, cost)
    dec = layer_decompose(plan, mu, mu, cost)
    assert np.allclose(dec.masses, [0.5, 0.5])
    for seed in range(5):
        s = two_stage_sample(dec, "X", 10**5, seed)
        assert abs(s.counts[0] / 1e5 - 0.5) < 0.01


def test_empirical_bound_examples():
    assert empirical_composite_bound([5, 5], [5, 5], [0.0, 0.0], [2.0, 4.0]) == 0.0
    # a layer missing on one side contributes no sub-problem cost
    assert empirical_composite_bound([10, 0], [5, 5], [3.0, 7.0], [1.0, 1.0]) == pytest.approx(0.5 * 3 + 4 * 1.0)
    with pytest.raises(LayerMismatch):
        empirical_composite_bound([1], [1], [0.0], [1.0], [0], [1])


def test_empirical_bound_single_layer_is_exact():
    mu = make_discrete([[0.5], [0.6], [0.9]])
    nu = make_discrete([[0.7], [0.8]])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, nu, cost)
    dec = layer_decompose(plan, mu, nu, cost, offset=0.0)
    assert len(dec.layers) == 1
    s_mu = two_stage_sample(dec, "X", 20, 1)
    s_nu = two_stage_sample(dec, "Y", 20, 2)
    bound, _ = composite_bound_from_samples(dec, s_mu, s_nu, cost)
    assert bound == pytest.approx(ot_value(s_mu.pooled, s_nu.pooled, cost), rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_empirical_bound_dominates_pooled(seed):
    rng = np.random.default_rng(seed)
    mu, nu = multiscale_measure(rng, scales=(0.3, 8.0)), multiscale_measure(rng, scales=(0.3, 8.0))
    cost = euclidean_power(1.0)
    plan, _ = solve_discrete(mu, nu, cost)
    dec = layer_decompose(plan, mu, nu, cost)
    s_mu = two_stage_sample(dec, "X", 50, rng)
    s_nu = two_stage_sample(dec, "Y", 50, rng)
    bound, _ = composite_bound_from_samples(dec, s_mu, s_nu, cost)
    exact = ot_value(s_mu.pooled, s_nu.pooled, cost)
    assert exact <= bound * (1 + 1e-12) + 1e-12


def test_ipm_check_exact_resample():
    mu = make_discrete([[0.2], [3.0], [9.0], [30.0]], [0.25, 0.25, 0.25, 0.25])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, mu, cost)
    dec = layer_decompose(plan, mu, mu, cost)
    s = two_stage_sample(dec, "X", 200, 3)
    lhs, rhs = ipm_composition_check(dec, s)
    assert lhs <= rhs + 1e-9


@pytest.mark.parametrize("seed", range(25))
def test_ipm_check_random(seed):
    rng = np.random.default_rng(seed)
    mu = multiscale_measure(rng)
    cost = euclidean_power(1.0)
    plan, _ = solve_discrete(mu, mu, cost)
    dec = layer_decompose(plan, mu, mu, cost)
    s = two_stage_sample(dec, "X", 200, rng)
    lhs, rhs = ipm_composition_check(dec, s)
    assert lhs <= rhs + 1e-9


def test_ipm_single_layer_equality():
    mu = make_discrete([[0.5], [0.6], [0.7]])
    cost = euclidean_power(1)
    plan, _ = solve_discrete(mu, mu, cost)
    dec = layer_decompose(plan, mu, mu, cost, offset=0.0)
    s = two_stage_sample(dec, "X", 30, 0)
    lhs, rhs = ipm_composition_check(dec, s)
    assert lhs == pytest.approx(rhs, abs=1e-12)
