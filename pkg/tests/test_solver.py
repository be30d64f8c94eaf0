import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from subjective_bubbles.beliefs import density_constant, density_optimist
from subjective_bubbles.errors import ConvergenceError, SolvencyError, ValidationError
from subjective_bubbles.market import gbm_dividend
from subjective_bubbles.paths import make_time_grid, sample_brownian_paths
from subjective_bubbles.solver import (
    AgentSpec,
    Utility,
    phi_aggregate,
    phi_inverse,
    solve_multipliers_general,
)

ETA0 = 0.9754115099857198


def test_utility_inverse_marginal():
    assert Utility.log().inverse_marginal(4.0) == 0.25
    assert Utility.power(2.0).inverse_marginal(4.0) == 0.5
    assert Utility.log().is_log and not Utility.power(3).is_log
    with pytest.raises(ValidationError):
        Utility(0.0)
    with pytest.raises(ValidationError):
        AgentSpec(-1.0)


def test_phi_inverse_log_examples():
    # log utilities: Phi(y) = sum(nu) / y
    assert phi_inverse(2.0, [1.0, 1.0], [Utility.log()] * 2) == pytest.approx(1.0, rel=1e-14)
    assert phi_inverse(4.0, [1.0, 0.0], [Utility.log()] * 2) == pytest.approx(0.25, rel=1e-14)


def test_phi_inverse_power_example():
    # single power agent: (y / nu)^(-1/g) = x  =>  y = nu x^(-g)
    assert phi_inverse(3.0, [2.0], [Utility.power(2.0)]) == pytest.approx(2.0 / 9.0, rel=1e-13)


def test_phi_inverse_rejects_empty_economy():
    with pytest.raises(SolvencyError):
        phi_inverse(1.0, [0.0, 0.0], [Utility.log()] * 2)
    with pytest.raises(ValidationError):
        phi_inverse(-1.0, [1.0], [Utility.log()])


@settings(max_examples=200, deadline=None)
@given(
    st.floats(1e-3, 1e3),
    st.lists(st.floats(0.0, 10.0), min_size=1, max_size=4),
    st.lists(st.floats(0.2, 8.0), min_size=4, max_size=4),
)
def test_phi_inverse_round_trip(x, nu, gammas):
    nu = np.array(nu)
    if not np.any(nu > 0):
        nu[0] = 1.0
    utils = [Utility(g) for g in gammas[: nu.size]]
    y = phi_inverse(x, nu, utils)
    assert phi_aggregate(y, nu, utils) == pytest.approx(x, rel=1e-10)


def test_phi_inverse_vectorized():
    nu = np.array([[1.0, 2.0, 0.5], [1.0, 0.0, 3.0]])
    utils = [Utility.power(2.0), Utility.log()]
    x = np.array([0.5, 1.0, 7.0])
    y = phi_inverse(x, nu, utils)
    np.testing.assert_allclose(phi_aggregate(y, nu, utils), x, rtol=1e-12)


def _log_sampler(grid, D0=4.0, v=0.1):
    def sample(seed, start, count):
        X = sample_brownian_paths(grid, 1, seed, start, count)
        D = gbm_dividend(grid, X, D0, 0.0, v)
        return D, [density_optimist(D), density_constant(grid, (count,))]

    return sample


def test_all_log_solver_recovers_closed_form():
    grid = make_time_grid(1.0, 50)
    agents = [AgentSpec(1.0), AgentSpec(2.0)]
    res = solve_multipliers_general(agents, _log_sampler(grid), 0.05, grid, 5000, 3, chunk_size=2500)
    np.testing.assert_allclose(res.y, ETA0 / np.array([1.0, 2.0]), rtol=1e-3)
    assert res.residual < 1e-6
    assert res.xi.shape == (100, 51)
    np.testing.assert_allclose(res.xi_paths(0, 3), res.xi[:3])


def _deterministic_sampler(grid, D0, a):
    def sample(seed, start, count):
        X = sample_brownian_paths(grid, 1, seed, start, count)
        D = gbm_dividend(grid, X, D0, a, 0.0)
        return D, [density_constant(grid, (count,))]

    return sample


def test_power_solver_matches_quadrature():
    # one agent consumes D: xi = e^{-rho t} D^{-g} / y and the budget gives
    # y = int_0^T e^{-rho t} D_t^{1-g} dt / w
    g, rho, a, D0, w = 3.0, 0.05, 0.03, 2.0, 1.5
    grid = make_time_grid(1.0, 2000)
    oracle = quad(lambda t: math.exp(-rho * t) * (D0 * math.exp(a * t)) ** (1 - g), 0, 1, epsabs=1e-15)[0] / w
    assert oracle == pytest.approx(0.157827067732532953, rel=1e-14)
    res = solve_multipliers_general(
        [AgentSpec(w, Utility.power(g))], _deterministic_sampler(grid, D0, a), rho, grid, 4, 0, tol=1e-12
    )
    assert abs(res.y[0] / oracle - 1) < 1e-6


def test_solver_reports_nonconvergence():
    grid = make_time_grid(1.0, 20)
    with pytest.raises(ConvergenceError) as info:
        solve_multipliers_general(
            [AgentSpec(1.0, Utility.power(2.0))], _deterministic_sampler(grid, 2.0, 0.0), 0.05, grid, 4, 0,
            max_iter=2, tol=1e-14,
        )
    assert info.value.residual > 0


def test_solver_validates_inputs():
    grid = make_time_grid(1.0, 4)
    with pytest.raises(ValidationError):
        solve_multipliers_general([], _log_sampler(grid), 0.05, grid, 10, 0)
    with pytest.raises(ValidationError):
        solve_multipliers_general([AgentSpec(1.0)], _log_sampler(grid), 0.0, grid, 10, 0)
