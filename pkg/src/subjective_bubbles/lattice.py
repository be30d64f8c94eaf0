"""Binomial-tree oracle for the optimist economy.

The aggregate dividend moves by ``u`` or ``d`` per step with probability one
half, where ``u, d = e^{a dt} (1 +- sqrt(e^{v^2 dt} - 1))`` match the mean and
variance of the geometric Brownian step exactly.  Agent 1 holds optimist
beliefs (bankrupt at the first node with ``D <= 1``), agent 2 the reference
beliefs.  Values are computed twice: by enumerating every path, and by
backward induction over ``(node, solvent)`` states.  The two must agree to
rounding, and a Monte Carlo run on the same tree must agree with both to
within sampling error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .beliefs import density_constant, density_optimist
from .equilibrium import eta, log_state_price_density
from .errors import ValidationError
from .market import DividendPath
from .paths import TimeGrid, make_time_grid
from .stats import MonteCarloEstimate
from .valuation import deflated_integrals

MAX_LATTICE_STEPS = 20


@dataclass(frozen=True)
class LatticeEconomy:
    D0: float
    v: float
    rho: float = 0.05
    T: float = 1.0
    n_steps: int = 10
    w: tuple[float, float] = (1.0, 1.0)
    a: float = 0.0

    def __post_init__(self):
        if not 1 <= self.n_steps <= MAX_LATTICE_STEPS:
            raise ValidationError(f"lattice enumeration supports 1..{MAX_LATTICE_STEPS} steps, got {self.n_steps}", "n_steps")
        if not self.D0 > 1:
            raise ValidationError(f"optimist beliefs need D0 > 1, got {self.D0}", "D0")
        if self.v < 0:
            raise ValidationError("volatility must be nonnegative", "v")

    @property
    def grid(self) -> TimeGrid:
        return make_time_grid(self.T, self.n_steps)

    @property
    def factors(self) -> tuple[float, float]:
        dt = self.T / self.n_steps
        spread = math.sqrt(math.expm1(self.v * self.v * dt))
        g = math.exp(self.a * dt)
        return g * (1.0 + spread), g * (1.0 - spread)


@dataclass(frozen=True)
class LatticeValues:
    """Exact tree values of the market portfolio for agent 1."""

    F: float
    F1: float
    tail: float
    B1: float
    F_backward: float
    F1_backward: float

    @property
    def max_route_gap(self) -> float:
        return max(abs(self.F - self.F_backward), abs(self.F1 - self.F1_backward))


def _economy_on_paths(econ: LatticeEconomy, moves: np.ndarray):
    """Dividend, densities and state price density on paths given by up (1) / down (0) moves."""
    grid = econ.grid
    u, d = econ.factors
    factors = np.where(moves == 1, u, d)
    values = np.empty(moves.shape[:-1] + (grid.n_steps + 1,))
    values[..., 0] = econ.D0
    values[..., 1:] = econ.D0 * np.cumprod(factors, axis=-1)
    D = DividendPath(grid, values, econ.a, np.array([econ.v]))
    z1 = density_optimist(D, econ.D0)
    z2 = density_constant(grid, moves.shape[:-1])
    xi = log_state_price_density(D, [z1, z2], econ.w, econ.rho)
    return D, z1, xi


def lattice_oracle_value(econ: LatticeEconomy) -> LatticeValues:
    """``F``, ``F^1`` and the agent-1 bubble on the market portfolio by exhaustion."""
    n = econ.n_steps
    moves = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int8)
    D, z1, xi = _economy_on_paths(econ, moves)
    total, before, after = deflated_integrals(D.values, xi, z1.tau_index, econ.grid.dt)
    prob = 0.5 ** n
    F = float(total.sum() * prob)
    F1 = float(before.sum() * prob)
    tail = float(after.sum() * prob)
    Fb, F1b = _backward_induction(econ)
    return LatticeValues(F, F1, tail, F - F1, Fb, F1b)


def _backward_induction(econ: LatticeEconomy) -> tuple[float, float]:
    """Recombining-tree values over ``(up count, solvent)`` states."""
    n = econ.n_steps
    grid = econ.grid
    dt = grid.dt
    u, d = econ.factors
    w1, w2 = econ.w
    eta0 = eta(0.0, econ.rho, econ.T)

    def node(j):
        i = np.arange(j + 1)
        Dj = econ.D0 * u ** i * d ** (j - i)
        return Dj

    def deflated(j, Dj, solvent):
        # xi_j D_j with Z_1 evaluated at a solvent node; Z_1 = 0 otherwise
        z1 = np.where(solvent, (Dj - 1.0) / (econ.D0 - 1.0), 0.0)
        xi = math.exp(-econ.rho * grid.times[j]) * (w1 * z1 + w2) / (Dj * eta0)
        return xi * Dj

    # value[j][i, s]: expected deflated flow from step j onward, s = solvent flag
    # (solvent means no node up to and including j had D <= 1)
    full_next = np.zeros((n + 2, 2))
    pre_next = np.zeros((n + 2, 2))
    for j in range(n - 1, -1, -1):
        Dj = node(j)
        Dn = node(j + 1)
        full = np.zeros((j + 1, 2))
        pre = np.zeros((j + 1, 2))
        for s in (0, 1):
            f_j = deflated(j, Dj, bool(s))
            cont_full = 0.0
            cont_pre = 0.0
            for step in (0, 1):
                idx = np.arange(j + 1) + step
                solvent_next = bool(s) & (Dn[idx] > 1.0)
                f_next = np.where(solvent_next, deflated(j + 1, Dn[idx], True), deflated(j + 1, Dn[idx], False))
                seg = 0.5 * (f_j + f_next) * dt
                sn = solvent_next.astype(int)
                cont_full = cont_full + 0.5 * (seg + full_next[idx, sn])
                cont_pre = cont_pre + 0.5 * (np.where(s == 1, seg, 0.0) + pre_next[idx, sn])
            full[:, s] = cont_full
            pre[:, s] = cont_pre
        full_next, pre_next = full, pre
    xi0 = deflated(0, np.array([econ.D0]), True)[0] / econ.D0
    return float(full_next[0, 1] / xi0), float(pre_next[0, 1] / xi0)


@dataclass(frozen=True)
class LatticeMonteCarlo:
    F: MonteCarloEstimate
    F1: MonteCarloEstimate
    B1: MonteCarloEstimate


def lattice_monte_carlo(econ: LatticeEconomy, n_paths: int, seed: int) -> LatticeMonteCarlo:
    """Monte Carlo on the same tree: fair coin moves, same detection and quadrature."""
    if n_paths < 2:
        raise ValidationError("need at least two paths", "n_paths")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    moves = rng.integers(0, 2, size=(n_paths, econ.n_steps), dtype=np.int8)
    D, z1, xi = _economy_on_paths(econ, moves)
    total, before, after = deflated_integrals(D.values, xi, z1.tau_index, econ.grid.dt)
    return LatticeMonteCarlo(
        MonteCarloEstimate.from_samples(total),
        MonteCarloEstimate.from_samples(before),
        MonteCarloEstimate.from_samples(after),
    )
