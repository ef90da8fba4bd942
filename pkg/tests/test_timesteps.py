import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concepttree import build_distribution, sample, sample_many
from concepttree.core import ConfigError


def brute_force_pmf(total_steps, alpha):
    weights = [
        (1.0 - alpha * math.cos(math.pi * t / total_steps)) / total_steps
        for t in range(1, total_steps + 1)
    ]
    total = sum(weights)
    return [w / total for w in weights]


@pytest.mark.parametrize("total_steps,alpha", [(1000, 0.5), (1000, 0.0), (7, 1.0), (1, 0.3)])
def test_pmf_matches_direct_evaluation(total_steps, alpha):
    dist = build_distribution(total_steps, alpha)
    expected = brute_force_pmf(total_steps, alpha)
    np.testing.assert_allclose(dist.pmf, expected, rtol=0, atol=1e-12)
    assert abs(dist.pmf.sum() - 1.0) < 1e-9
    assert dist.probability(1) == pytest.approx(expected[0], abs=1e-12)
    assert dist.probability(total_steps) == pytest.approx(expected[-1], abs=1e-12)


def test_pmf_is_monotone_nondecreasing():
    dist = build_distribution(1000, 0.5)
    assert np.all(np.diff(dist.pmf) >= 0)


def test_skew_ratio_at_default_alpha():
    # endpoint weights are 1 -/+ alpha*cos(pi/T) ~ (1 - a, 1 + a), so the
    # largest step is about (1 + a) / (1 - a) times likelier than the smallest
    dist = build_distribution(1000, 0.5)
    assert dist.pmf[-1] / dist.pmf[0] == pytest.approx(3.0, rel=1e-4)


def test_alpha_zero_is_uniform():
    dist = build_distribution(500, 0.0)
    np.testing.assert_allclose(dist.pmf, np.full(500, 1 / 500), atol=1e-15)


def test_probability_rejects_out_of_range():
    dist = build_distribution(10, 0.5)
    with pytest.raises(ConfigError):
        dist.probability(0)
    with pytest.raises(ConfigError):
        dist.probability(11)


@pytest.mark.parametrize("total_steps,alpha", [(0, 0.5), (10, -0.1), (10, 1.5)])
def test_build_rejects_bad_parameters(total_steps, alpha):
    with pytest.raises(ConfigError):
        build_distribution(total_steps, alpha)


def test_sample_inverse_transform_oracle():
    # with u fixed, the draw must be the smallest t whose cdf exceeds u
    dist = build_distribution(50, 0.7)

    class FixedRng:
        def __init__(self, u):
            self.u = u

        def random(self, size=None):
            if size is None:
                return self.u
            return np.full(size, self.u)

    for u in [0.0, 1e-9, 0.25, 0.5, dist.cdf[0], dist.cdf[10], 1.0 - 1e-12]:
        expected = next(t for t in range(1, 51) if dist.cdf[t - 1] > u or t == 50)
        assert sample(dist, FixedRng(u)) == expected
        assert sample_many(dist, FixedRng(u), 3).tolist() == [expected] * 3


def test_sample_many_matches_repeated_sample():
    dist = build_distribution(200, 0.5)
    a = sample_many(dist, np.random.default_rng(42), 500)
    rng = np.random.default_rng(42)
    b = [sample(dist, rng) for _ in range(500)]
    assert a.tolist() == b


@given(
    total_steps=st.integers(min_value=1, max_value=300),
    alpha=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
    seed=st.integers(min_value=0, max_value=2**31),
)
@settings(max_examples=60, deadline=None)
def test_draws_stay_in_support(total_steps, alpha, seed):
    dist = build_distribution(total_steps, alpha)
    draws = sample_many(dist, np.random.default_rng(seed), 64)
    assert draws.min() >= 1 and draws.max() <= total_steps
    assert abs(dist.pmf.sum() - 1.0) < 1e-9


def test_empirical_frequencies_track_pmf():
    dist = build_distribution(100, 0.5)
    draws = sample_many(dist, np.random.default_rng(9), 200_000)
    counts = np.bincount(draws, minlength=101)[1:]
    np.testing.assert_allclose(counts / 200_000, dist.pmf, atol=3e-3)
