import numpy as np
import pytest

from helpers import toy_problem
from spider3p.exceptions import CapabilityError, ConfigError
from spider3p.oracles import (GradientOracle, LinearOracle, LipschitzData, MinibatchSampler,
                              ZeroNoise, estimate_cv, eta_error, eta_replicates, mean_field,
                              sample_minibatch, stream)


def test_single_index_batch():
    assert sample_minibatch(MinibatchSampler(1, 1), 0).tolist() == [0]


def test_exhaustive_batch_without_replacement():
    batch = sample_minibatch(MinibatchSampler(10, 10, "without_replacement"), 3)
    assert sorted(batch.tolist()) == list(range(10))


def test_batch_frequencies_uniform():
    rng = np.random.default_rng(0)
    sampler = MinibatchSampler(5, 2)
    idx = np.concatenate([sampler.sample(rng) for _ in range(100_000)])
    freq = np.bincount(idx, minlength=5) / idx.size
    np.testing.assert_allclose(freq, 0.2, atol=0.005)


def test_sampler_validation():
    with pytest.raises(ConfigError):
        MinibatchSampler(3, 4, "without_replacement")
    with pytest.raises(ConfigError):
        MinibatchSampler(3, 1, "bogus")


@pytest.mark.parametrize("mode", ["with_replacement", "without_replacement"])
def test_minibatch_mean_unbiased(mode):
    rng = np.random.default_rng(1)
    n, q, b = 7, 3, 3
    oracle = LinearOracle(rng.standard_normal((n, q, q)), rng.standard_normal((n, q)))
    s = rng.standard_normal(q)
    rows = oracle.exact(np.arange(n), s)
    sampler = MinibatchSampler(n, b, mode)
    means = np.array([rows[sampler.sample(rng)].mean(axis=0) for _ in range(100_000)])
    se = means.std(axis=0, ddof=1) / np.sqrt(len(means))
    assert np.linalg.norm(means.mean(axis=0) - rows.mean(axis=0)) <= 4 * np.linalg.norm(se)


def test_mean_field_constants_and_linear(rng):
    n, q = 6, 3
    c = rng.standard_normal((n, q))
    oracle = LinearOracle(np.zeros((n, q, q)), c)
    np.testing.assert_allclose(mean_field(oracle, np.ones(q)), c.mean(axis=0), atol=1e-15)
    A = rng.standard_normal((n, q, q))
    s = rng.standard_normal(q)
    oracle = LinearOracle(A, np.zeros((n, q)))
    np.testing.assert_allclose(mean_field(oracle, s), A.mean(axis=0) @ s, atol=1e-12)


def test_mean_field_quadrature_refinement():
    data, params, coarse = toy_problem()
    _, _, fine = toy_problem()
    fine.nodes = 256
    s = np.zeros(2)
    np.testing.assert_allclose(mean_field(coarse, s), mean_field(fine, s), atol=1e-10)


def test_capability_errors():
    with pytest.raises(CapabilityError):
        mean_field(GradientOracle(), np.zeros(1))
    with pytest.raises(CapabilityError):
        GradientOracle().mc([0], np.zeros(1), 1, None)


def test_eta_vanishes_for_exact_surrogate(toy):
    oracle = ZeroNoise(toy[2])
    eta = eta_error(oracle, [0, 3], np.array([0.1, 0.0]), np.zeros(2), 8, 0)
    np.testing.assert_array_equal(eta, 0.0)


def test_eta_vanishes_with_shared_draws(toy):
    s = np.array([0.05, -0.1])
    eta = eta_error(toy[2], [1, 2], s, s, 8, 5, shared=True)
    np.testing.assert_allclose(eta, 0.0, atol=1e-15)


def test_eta_unbiased_on_toy(toy):
    oracle = toy[2]
    s_prev = np.array([0.05, -0.1])
    s_curr = np.array([-0.02, 0.08])
    eta = eta_replicates(oracle, MinibatchSampler(4, 2), s_curr, s_prev, 8, 10_000,
                         np.random.default_rng(2))
    se = eta.std(axis=0, ddof=1) / np.sqrt(len(eta))
    assert np.all(np.abs(eta.mean(axis=0)) <= 4 * se)


def test_eta_error_matches_replicates_law(toy):
    # the single-call and vectorized forms estimate the same second moment
    oracle = toy[2]
    s_prev, s_curr = np.zeros(2), np.array([0.05, 0.05])
    rng = np.random.default_rng(3)
    sampler = MinibatchSampler(4, 2)
    single = np.array([eta_error(oracle, sampler.sample(rng), s_curr, s_prev, 4, rng)
                       for _ in range(3000)])
    vec = eta_replicates(oracle, sampler, s_curr, s_prev, 4, 3000, rng)
    a, b = np.sum(single**2, axis=1), np.sum(vec**2, axis=1)
    se = np.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) <= 4 * se


def test_cv_point_mass_is_zero(rng):
    oracle = LinearOracle(rng.standard_normal((3, 2, 2)), rng.standard_normal((3, 2)))
    assert estimate_cv(oracle, [np.zeros(2), np.ones(2)]) == 0.0


def test_cv_gaussian_statistic():
    sigma = 0.7
    oracle = LinearOracle(np.zeros((1, 1, 1)), np.zeros((1, 1)), noise=sigma)
    assert estimate_cv(oracle, [np.zeros(1)]) == pytest.approx(2 * sigma**2, rel=1e-15)


def test_cv_against_empirical_variance(toy):
    oracle = toy[2]
    g = oracle.regularizer()
    rng = np.random.default_rng(4)
    idx = np.arange(oracle.n)
    for _ in range(10):
        s = g.radial_projection(rng.standard_normal(2)) * rng.uniform(0.1, 1.0)
        exact = oracle.exact(idx, s)
        draws = oracle.mc(np.tile(idx, 10_000), s, 1, rng)
        emp = 2 * np.mean(np.sum((draws - np.tile(exact, (10_000, 1))) ** 2, axis=1))
        assert estimate_cv(oracle, [s]) == pytest.approx(emp, rel=0.05)


def test_mc_reproducible(toy):
    oracle = toy[2]
    s = np.array([0.1, 0.2])
    a = oracle.mc(np.arange(4), s, 16, stream(9, 2, 1, 1, 0))
    b = oracle.mc(np.arange(4), s, 16, stream(9, 2, 1, 1, 0))
    np.testing.assert_array_equal(a, b)
    c = oracle.mc(np.arange(4), s, 16, stream(9, 2, 1, 1, 1))
    assert not np.array_equal(a, c)


def test_lipschitz_aggregation():
    lip = LipschitzData(np.array([1.0, 3.0]), 2.0)
    assert lip.L == 3.0
    lip.aggregation = "rms"
    assert lip.L == pytest.approx(np.sqrt(5.0))
    assert LipschitzData([1.0], 1.0, L_override=7.0).L == 7.0
    with pytest.raises(ConfigError):
        LipschitzData([0.0], 1.0)
