"""Equilibria with non-equivalent beliefs and the subjective bubbles they produce.

The package simulates heterogeneous-agent economies in which some agents
assign probability zero to events that others consider possible, computes
the equilibrium on every Monte Carlo path and estimates each agent's bubble
on the traded assets.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import ConvergenceError, SolvencyError, ValidationError
from .stats import MonteCarloEstimate
from .paths import TimeGrid, make_time_grid, sample_brownian_paths
from .equilibrium import EquilibriumBundle, build_log_bundle, eta
from .solver import AgentSpec, Utility, phi_inverse, solve_multipliers_general
from .valuation import BubbleReport, bubble_decomposition, riskless_bubble
from .lattice import LatticeEconomy, lattice_monte_carlo, lattice_oracle_value
from .scenarios import SCENARIOS, ScenarioConfig, ScenarioOutput, default_config, run_scenario
from .config import parse_config

__all__ = [
    "AgentSpec",
    "BubbleReport",
    "ConvergenceError",
    "EquilibriumBundle",
    "LatticeEconomy",
    "MonteCarloEstimate",
    "SCENARIOS",
    "ScenarioConfig",
    "ScenarioOutput",
    "SolvencyError",
    "TimeGrid",
    "Utility",
    "ValidationError",
    "build_log_bundle",
    "bubble_decomposition",
    "default_config",
    "eta",
    "lattice_monte_carlo",
    "lattice_oracle_value",
    "make_time_grid",
    "parse_config",
    "phi_inverse",
    "riskless_bubble",
    "run_scenario",
    "sample_brownian_paths",
    "solve_multipliers_general",
    "__version__",
]
