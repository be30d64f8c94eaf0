import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subjective_bubbles.beliefs import (
    bayes_weighted_expectation,
    density_constant,
    density_drawdown,
    density_linear,
    density_optimist,
    density_pessimist,
    verify_martingale,
)
from subjective_bubbles.errors import ValidationError
from subjective_bubbles.market import DividendPath, gbm_dividend, share_process, split_dividends
from subjective_bubbles.paths import BrownianPath, make_time_grid, sample_brownian_paths, sample_uniforms


def _dividend(values, v=0.2):
    values = np.asarray(values, dtype=float)
    grid = make_time_grid(1.0, values.shape[-1] - 1)
    return DividendPath(grid, values, 0.0, np.array([v]))


def test_gbm_exact_on_grid():
    g = make_time_grid(1.0, 4)
    X = BrownianPath(g, np.array([[0.0], [0.1], [-0.2], [0.3], [0.5]]))
    D = gbm_dividend(g, X, 2.0, 0.03, 0.2)
    expected = 2.0 * np.exp(0.2 * X.values[:, 0] + (0.03 - 0.02) * g.times)
    np.testing.assert_allclose(D.values, expected, rtol=1e-15)
    assert D.D0 == 2.0


def test_gbm_rejects_nonpositive_start():
    g = make_time_grid(1.0, 4)
    X = sample_brownian_paths(g, 1, 0, 0, 1)
    with pytest.raises(ValidationError):
        gbm_dividend(g, X, 0.0, 0.0, 0.2)


def test_share_split_sums_exactly():
    g = make_time_grid(1.0, 200)
    X = sample_brownian_paths(g, 2, 4, 0, 50)
    D = gbm_dividend(g, X, 1.0, 0.0, (1.0, 1.0))
    psi = share_process(g, X, 0.5, (0.5, -0.5))
    assert np.all((psi.values > 0) & (psi.values < 1))
    d1, d2 = split_dividends(D, psi)
    assert np.all(d1.values + d2.values == D.values)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_share_process_stays_inside(psi0, seed):
    g = make_time_grid(1.0, 50)
    X = sample_brownian_paths(g, 2, seed, 0, 4)
    psi = share_process(g, X, psi0, (3.0, -3.0))
    assert np.all((psi.values > 0) & (psi.values < 1))


def test_optimist_density_half():
    Z = density_optimist(_dividend([2.0, 1.5, 3.0]))
    np.testing.assert_allclose(Z.Z, [1.0, 0.5, 2.0])
    assert Z.tau_index == 3


def test_pessimist_density_half():
    Z = density_pessimist(_dividend([0.5, 0.75, 0.25]))
    np.testing.assert_allclose(Z.Z, [1.0, 0.5, 1.5])


def test_drawdown_density_is_square_at_running_max():
    # kappa = 1/2 and D = D* give Z = (D / D0)^2
    d = np.array([1.0, 1.2, 1.5, 2.0])
    Z = density_drawdown(_dividend(d), 0.5)
    np.testing.assert_allclose(Z.Z, d**2, rtol=1e-14)


def test_optimist_absorbs_at_one():
    Z = density_optimist(_dividend([2.0, 1.4, 0.9, 1.3, 2.5]))
    assert Z.tau_index == 2
    np.testing.assert_array_equal(Z.Z[2:], 0.0)
    assert np.all(np.isnan(Z.gamma[2:]))
    assert np.all(np.isfinite(Z.gamma[:2]))
    np.testing.assert_array_equal(Z.alive(), [True, True, False, False, False])
    assert Z.tau_time() == pytest.approx(0.5)


def test_drawdown_absorbs_at_kappa_fraction():
    Z = density_drawdown(_dividend([1.0, 2.0, 1.1, 0.9, 3.0]), 0.5)
    assert Z.tau_index == 3
    assert Z.Z[3] == 0.0


def test_optimist_loading():
    D = _dividend([2.0, 3.0], v=0.2)
    Z = density_optimist(D)
    np.testing.assert_allclose(Z.gamma[:, 0], [0.4, 0.3])


def test_linear_density_and_constant():
    g = make_time_grid(1.0, 3)
    X = BrownianPath(g, np.array([[0.0, 0.0], [0.5, -0.5], [-1.2, 0.1], [0.0, 0.0]]))
    Z = density_linear(X, 0)
    np.testing.assert_allclose(Z.Z, [1.0, 1.5, 0.0, 0.0])
    assert Z.tau_index == 2
    np.testing.assert_allclose(Z.gamma[1], [1 / 1.5, 0.0])
    ref = density_constant(g, (2,), dim=2)
    assert ref.Z.shape == (2, 4) and np.all(ref.Z == 1)
    assert np.all(ref.tau_index == 4)


@pytest.mark.parametrize("D0", [1.0, 0.5])
def test_optimist_needs_start_above_one(D0):
    with pytest.raises(ValidationError):
        density_optimist(_dividend([D0, D0]))


def test_bayes_weighted_expectation():
    e = bayes_weighted_expectation([0.0, 2.0], [5.0, 3.0])
    assert e.mean == 3.0
    with pytest.raises(ValidationError):
        bayes_weighted_expectation([1.0], [1.0, 2.0])


def _sampler(kind):
    grid = make_time_grid(1.0, 100)

    def sample(seed, start, count):
        X = sample_brownian_paths(grid, 2 if kind == "linear" else 1, seed, start, count)
        if kind == "linear":
            return density_linear(X, 0, uniforms=sample_uniforms(grid, seed, start, count))
        D0 = {"optimist": 1.5, "pessimist": 0.5, "drawdown": 1.0}[kind]
        D = gbm_dividend(grid, X, D0, 0.0, 0.3)
        if kind == "optimist":
            return density_optimist(D)
        if kind == "pessimist":
            return density_pessimist(D)
        return density_drawdown(D, 0.5, max_uniforms=sample_uniforms(grid, seed, start, count, stream=3))

    return sample


@pytest.mark.parametrize("kind", ["optimist", "pessimist", "drawdown", "linear"])
def test_densities_are_martingales(kind):
    report = verify_martingale(_sampler(kind), [0.25, 0.5, 1.0], 20_000, 17, chunk_size=5000)
    assert report.all_passed, report.estimates


def test_bridge_detection_finds_more_bankruptcies():
    grid = make_time_grid(1.0, 50)
    X = sample_brownian_paths(grid, 1, 3, 0, 5000)
    D = gbm_dividend(grid, X, 1.2, 0.0, 0.3)
    plain = density_optimist(D)
    bridged = density_optimist(D, uniforms=sample_uniforms(grid, 3, 0, 5000))
    assert bridged.bankrupt.sum() > plain.bankrupt.sum()
    assert np.all(bridged.tau_index <= plain.tau_index)
    # exact first-passage probability of log D to 0 from log 1.2 with drift -v^2/2
    b, mu, s = -math.log(1.2), -0.045, 0.3
    from scipy.stats import norm

    exact = norm.cdf((b - mu) / s) + math.exp(2 * mu * b / s**2) * norm.cdf((b + mu) / s)
    se = math.sqrt(exact * (1 - exact) / 5000)
    assert abs(bridged.bankrupt.mean() - exact) < 4 * se


def test_grid_maximum_biases_drawdown_density():
    # control for the bridge-sampled maximum: the grid maximum alone drifts upward
    grid = make_time_grid(1.0, 50)
    X = sample_brownian_paths(grid, 1, 8, 0, 40_000)
    D = gbm_dividend(grid, X, 1.0, 0.0, 0.3)
    plain = density_drawdown(D, 0.5).Z[:, -1]
    exact = density_drawdown(D, 0.5, max_uniforms=sample_uniforms(grid, 8, 0, 40_000, stream=3)).Z[:, -1]
    se = plain.std() / math.sqrt(plain.size)
    assert plain.mean() - 1.0 > 3 * se
    assert abs(exact.mean() - 1.0) < 3 * exact.std() / math.sqrt(exact.size)
