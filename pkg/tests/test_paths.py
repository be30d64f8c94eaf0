import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from subjective_bubbles.errors import ValidationError
from subjective_bubbles.paths import (
    BrownianPath,
    bridge_crossing_correction,
    bridge_crossing_indices,
    bridge_running_max,
    crossing_indices,
    discrete_stochastic_exponential,
    first_crossing_index,
    make_time_grid,
    path_seed,
    running_max,
    sample_brownian,
    sample_brownian_paths,
    sample_uniforms,
)


def test_grid_four_steps():
    g = make_time_grid(1.0, 4)
    np.testing.assert_array_equal(g.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.dt == 0.25
    assert len(g) == 5


@pytest.mark.parametrize("T,n", [(0.0, 4), (-1.0, 4), (1.0, 0), (1.0, 2.5)])
def test_grid_rejects_bad_input(T, n):
    with pytest.raises(ValidationError):
        make_time_grid(T, n)


def test_grid_index_of_and_coarsen():
    g = make_time_grid(2.0, 8)
    assert g.index_of(1.0) == 4
    assert g.coarsen(4).n_steps == 2
    with pytest.raises(ValidationError):
        g.coarsen(3)
    with pytest.raises(ValidationError):
        g.index_of(2.5)


def test_same_seed_same_path():
    g = make_time_grid(1.0, 50)
    a = sample_brownian(g, 2, 123)
    b = sample_brownian(g, 2, 123)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.shape == (51, 2)
    assert np.all(a.values[0] == 0.0)


def test_paths_do_not_depend_on_chunking():
    g = make_time_grid(1.0, 20)
    whole = sample_brownian_paths(g, 1, 7, 0, 10).values
    parts = np.concatenate([sample_brownian_paths(g, 1, 7, s, 5).values for s in (0, 5)])
    np.testing.assert_array_equal(whole, parts)
    single = sample_brownian(g, 1, path_seed(7, 3)).values
    np.testing.assert_array_equal(whole[3], single)


def test_path_seeds_distinct():
    seeds = {path_seed(0, i) for i in range(10_000)}
    assert len(seeds) == 10_000


def test_brownian_moments():
    g = make_time_grid(1.0, 16)
    x = sample_brownian_paths(g, 1, 11, 0, 20_000).values[:, -1, 0]
    assert abs(x.mean()) < 4 / math.sqrt(x.size)
    assert abs(x.var() - 1.0) < 0.05


def test_uniform_stream_is_separate():
    g = make_time_grid(1.0, 10)
    u1 = sample_uniforms(g, 3, 0, 4, stream=1)
    u2 = sample_uniforms(g, 3, 0, 4, stream=2)
    assert u1.shape == (4, 10)
    assert np.all((u1 >= 0) & (u1 < 1))
    assert not np.array_equal(u1, u2)
    with pytest.raises(ValidationError):
        sample_uniforms(g, 3, 0, 4, stream=0)


def test_running_max_example():
    np.testing.assert_array_equal(running_max([1.0, 3.0, 2.0, 5.0, 4.0]), [1, 3, 3, 5, 5])


@given(arrays(np.float64, st.integers(1, 40), elements=st.floats(-1e6, 1e6)))
def test_running_max_properties(p):
    m = running_max(p)
    assert np.all(m >= p)
    assert np.all(np.diff(m) >= 0)
    assert m[-1] == p.max()


def test_first_crossing_examples():
    p = np.array([2.0, 1.5, 1.0, 0.5])
    assert first_crossing_index(p, 1.0) == 2
    assert first_crossing_index(p, 1.0, "below") == 3
    assert first_crossing_index(p, 0.1) is None
    assert first_crossing_index(np.array([0.0, 1.0, 2.0]), 1.0, "at-or-above") == 1


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-10, 10)), st.floats(-10, 10))
def test_crossing_index_is_first_hit(p, level):
    j = crossing_indices(p, level)
    assert np.all(p[:j] > level)
    if j < p.size:
        assert p[j] <= level


def test_bridge_probability_example():
    assert bridge_crossing_correction(1.0, 1.0, 0.0, 1.0, 1.0) == pytest.approx(0.1353352832366127, rel=1e-14)
    assert bridge_crossing_correction(-0.1, 1.0, 0.0, 1.0, 1.0) == 1.0


def test_bridge_probability_matches_fine_simulation():
    # brute force: fine Brownian bridges from 0.3 to 0.4 over one unit step, barrier 0
    rng = np.random.default_rng(5)
    n, m = 20_000, 1000
    t = np.linspace(0.0, 1.0, m + 1)
    w = np.concatenate([np.zeros((n, 1)), np.cumsum(rng.standard_normal((n, m)) * math.sqrt(1 / m), axis=1)], axis=1)
    bridge = 0.3 + w - t * (w[:, -1:] - 0.1)
    hit = (bridge.min(axis=1) <= 0).mean()
    p = bridge_crossing_correction(0.3, 0.4, 0.0, 1.0, 1.0)
    # the discrete monitor misses some crossings, so it sits just below the exact value
    assert p - 0.02 < hit <= p + 3 * math.sqrt(p * (1 - p) / n)


def test_bridge_indices_never_later_than_grid():
    g = make_time_grid(1.0, 100)
    x = sample_brownian_paths(g, 1, 2, 0, 200).values[..., 0]
    u = sample_uniforms(g, 2, 0, 200)
    grid_hit = crossing_indices(x, -0.5)
    bridge_hit = bridge_crossing_indices(x, -0.5, g.dt, 1.0, u)
    assert np.all(bridge_hit <= grid_hit)
    assert np.any(bridge_hit < grid_hit)


def test_stochastic_exponential_constant_loading():
    g = make_time_grid(1.0, 10)
    X = sample_brownian_paths(g, 1, 9, 0, 3)
    E = discrete_stochastic_exponential(np.full((3, 10, 1), 0.4), X)
    expected = np.exp(0.4 * X.values[..., 0] - 0.08 * g.times)
    np.testing.assert_allclose(E, expected, rtol=1e-13)


def test_swap_exchanges_coordinates():
    g = make_time_grid(1.0, 5)
    X = sample_brownian_paths(g, 2, 1, 0, 2)
    Y = X.swap()
    np.testing.assert_array_equal(Y.values[..., 0], X.values[..., 1])
    assert isinstance(Y, BrownianPath)


def test_bridge_running_max_dominates_grid_max():
    g = make_time_grid(1.0, 20)
    x = sample_brownian_paths(g, 1, 6, 0, 100).values[..., 0]
    m = bridge_running_max(x, g.dt, 1.0, sample_uniforms(g, 6, 0, 100, stream=3))
    assert np.all(m >= running_max(x))
    assert np.all(np.diff(m, axis=-1) >= 0)
    assert np.all(m[:, 0] == x[:, 0])


def test_bridge_running_max_law():
    # P(max of a standard Brownian motion on [0, 1] >= 1) = 2 N(-1)
    g = make_time_grid(1.0, 4)
    x = sample_brownian_paths(g, 1, 10, 0, 40_000).values[..., 0]
    m = bridge_running_max(x, g.dt, 1.0, sample_uniforms(g, 10, 0, 40_000, stream=3))[:, -1]
    p = 2 * 0.15865525393145707
    se = math.sqrt(p * (1 - p) / m.size)
    assert abs((m >= 1.0).mean() - p) < 4 * se
