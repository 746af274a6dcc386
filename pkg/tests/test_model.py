import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq
from scipy.stats import kstest

from ewmaopt.model import ExpChangeModel, Regime, cdf, density, likelihood_ratio, sample


def test_model_validation():
    with pytest.raises(ValueError):
        ExpChangeModel(0.0)
    with pytest.raises(ValueError):
        ExpChangeModel(-1.0)


def test_density_at_zero():
    assert density(ExpChangeModel(0.5), Regime.PRE_CHANGE, 0.0) == 1.0
    assert density(ExpChangeModel(1.0), Regime.POST_CHANGE, 0.0) == 0.5


def test_density_direct_substitution():
    val = density(ExpChangeModel(0.5), Regime.POST_CHANGE, 1.5)
    assert val == pytest.approx((1.0 / 1.5) * math.exp(-1.0), rel=1e-15)


def test_density_zero_below_support():
    assert density(ExpChangeModel(0.5), Regime.PRE_CHANGE, -0.3) == 0.0


def test_cdf_values():
    m = ExpChangeModel(1.0)
    assert cdf(ExpChangeModel(0.5), Regime.PRE_CHANGE, 0.0) == 0.0
    assert cdf(m, Regime.POST_CHANGE, 1e9) == pytest.approx(1.0)
    assert cdf(m, Regime.POST_CHANGE, 2.0) == pytest.approx(1.0 - math.exp(-1.0), rel=1e-15)
    assert cdf(m, Regime.PRE_CHANGE, -1.0) == 0.0


def test_cdf_monotone_on_grid():
    m = ExpChangeModel(0.7)
    grid = np.linspace(0.0, 20.0, 500)
    vals = cdf(m, Regime.POST_CHANGE, grid)
    assert np.all(np.diff(vals) >= 0.0)
    assert vals[0] == 0.0
    assert vals[-1] > 1.0 - 1e-5


def test_likelihood_ratio_at_zero():
    assert likelihood_ratio(ExpChangeModel(1.0), 0.0) == pytest.approx(0.5)
    assert likelihood_ratio(ExpChangeModel(0.5), 0.0) == pytest.approx(2.0 / 3.0)


def test_likelihood_ratio_crosses_one():
    # solve (1/2) e^(x/2) = 1 by hand: x = 2 ln 2; confirm numerically
    m = ExpChangeModel(1.0)
    x_hand = 2.0 * math.log(2.0)
    assert likelihood_ratio(m, x_hand) == pytest.approx(1.0, rel=1e-14)
    x_num = brentq(lambda x: likelihood_ratio(m, x) - 1.0, 0.0, 10.0)
    assert x_num == pytest.approx(x_hand, rel=1e-10)


def test_likelihood_ratio_rejects_negative():
    with pytest.raises(ValueError):
        likelihood_ratio(ExpChangeModel(1.0), -0.1)
    with pytest.raises(ValueError):
        likelihood_ratio(ExpChangeModel(1.0), np.array([0.5, -0.5]))


@given(
    theta=st.floats(min_value=0.05, max_value=5.0, allow_nan=False),
    x=st.floats(min_value=0.0, max_value=50.0, allow_nan=False),
)
@settings(max_examples=200, deadline=None)
def test_ratio_consistent_with_densities(theta, x):
    m = ExpChangeModel(theta)
    direct = density(m, Regime.POST_CHANGE, x) / density(m, Regime.PRE_CHANGE, x)
    assert likelihood_ratio(m, x) == pytest.approx(direct, rel=1e-12)


def test_likelihood_ratio_increasing():
    m = ExpChangeModel(0.5)
    grid = np.linspace(0.0, 30.0, 400)
    vals = likelihood_ratio(m, grid)
    assert np.all(np.diff(vals) > 0.0)
    assert vals[0] == pytest.approx(1.0 / 1.5)


def test_sample_means():
    m = ExpChangeModel(1.0)
    rng = np.random.default_rng(42)
    pre = sample(m, Regime.PRE_CHANGE, rng, size=1_000_000)
    assert pre.mean() == pytest.approx(1.0, abs=0.01)
    post = sample(m, Regime.POST_CHANGE, rng, size=1_000_000)
    assert post.mean() == pytest.approx(2.0, abs=0.02)
    assert np.all(pre >= 0.0)


def test_sample_deterministic_given_seed():
    m = ExpChangeModel(0.5)
    a = sample(m, Regime.POST_CHANGE, np.random.default_rng(7), size=1000)
    b = sample(m, Regime.POST_CHANGE, np.random.default_rng(7), size=1000)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("regime", [Regime.PRE_CHANGE, Regime.POST_CHANGE])
def test_sample_matches_cdf_ks(regime):
    m = ExpChangeModel(0.5)
    rng = np.random.default_rng(314)
    draws = sample(m, regime, rng, size=100_000)
    stat = kstest(draws, lambda x: cdf(m, regime, x))
    assert stat.pvalue > 0.01
