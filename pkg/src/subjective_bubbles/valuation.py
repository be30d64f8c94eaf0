"""Fundamental values, subjective bubbles and the riskless-asset bubble.

Ensembles are arrays with paths on the leading axis and time on the last.
Deflated integrals use the trapezoidal rule on the simulation grid.  A step
``t_j -> t_{j+1}`` counts as *before* ``tau`` when ``j < tau_index``, so the
split of the full integral into a pre-bankruptcy part and a tail is exact
step by step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import ValidationError
from .paths import TimeGrid
from .stats import MonteCarloEstimate


def deflated_integrals(c, xi, tau_index, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-path ``int_0^T xi c``, its part before ``tau`` and the tail, each over ``xi_0``.

    Points with ``xi == 0`` contribute nothing, whatever ``c`` is there.
    """
    c = np.asarray(c, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if c.shape != xi.shape:
        c = np.broadcast_to(c, xi.shape)
    if xi.size == 0:
        raise ValidationError("empty ensemble")
    f = np.where(xi > 0, xi * c, 0.0)
    steps = 0.5 * (f[..., :-1] + f[..., 1:]) * dt
    j = np.arange(steps.shape[-1])
    before_mask = j < np.asarray(tau_index)[..., None]
    before = np.where(before_mask, steps, 0.0).sum(axis=-1)
    after = np.where(before_mask, 0.0, steps).sum(axis=-1)
    total = steps.sum(axis=-1)
    xi0 = xi[..., 0]
    return total / xi0, before / xi0, after / xi0


def fundamental_value_reference(c, xi, grid: TimeGrid) -> MonteCarloEstimate:
    """``xi_0^{-1} E[int_0^T xi_s c_s ds]``."""
    n = np.shape(xi)[-1]
    total, _, _ = deflated_integrals(c, xi, np.full(np.shape(xi)[:-1], n), grid.dt)
    return MonteCarloEstimate.from_samples(total)


def fundamental_value_subjective(c, xi, tau_index, grid: TimeGrid) -> MonteCarloEstimate:
    """``xi_0^{-1} E[int_0^{tau_k} xi_s c_s ds]``, the value under agent ``k``'s beliefs."""
    _, before, _ = deflated_integrals(c, xi, tau_index, grid.dt)
    return MonteCarloEstimate.from_samples(before)


@dataclass(frozen=True)
class BubbleReport:
    """Fundamental values and the bubble of one asset as seen by agent ``k``.

    ``B`` is estimated from the tail ``xi_0^{-1} E[int_{tau_k}^T xi c]``, which
    equals ``price - F^k`` whenever the price is the reference fundamental
    value and has far smaller variance than the plain difference.  The plain
    difference is kept as ``B_direct``.
    """

    asset: str
    k: int
    price: float
    F: MonteCarloEstimate
    Fk: MonteCarloEstimate
    tail: MonteCarloEstimate
    B: MonteCarloEstimate
    B_direct: MonteCarloEstimate
    residual: MonteCarloEstimate

    @classmethod
    def from_integrals(cls, asset, k, price, total, before, after) -> "BubbleReport":
        total = np.asarray(total, dtype=float)
        before = np.asarray(before, dtype=float)
        after = np.asarray(after, dtype=float)
        Fk = MonteCarloEstimate.from_samples(before)
        tail = MonteCarloEstimate.from_samples(after)
        return cls(
            asset=asset,
            k=k,
            price=float(price),
            F=MonteCarloEstimate.from_samples(total),
            Fk=Fk,
            tail=tail,
            B=tail,
            B_direct=MonteCarloEstimate(price - Fk.mean, Fk.stderr, Fk.n),
            residual=MonteCarloEstimate.from_samples(total - before - after),
        )

    @property
    def nonnegative(self) -> bool:
        return self.B.mean >= -3.0 * self.B.stderr

    def rows(self):
        """``(name, estimate)`` pairs for tabular output."""
        prefix = f"{self.asset}.agent{self.k + 1}"
        return [
            (f"{prefix}.F", self.F),
            (f"{prefix}.Fk", self.Fk),
            (f"{prefix}.tail", self.tail),
            (f"{prefix}.B", self.B),
            (f"{prefix}.B_direct", self.B_direct),
            (f"{prefix}.residual", self.residual),
        ]


def bubble_decomposition(c, xi, price0: float, tau_index, grid: TimeGrid, *, asset: str = "market", k: int = 0) -> BubbleReport:
    """Decompose the time-0 value of cash flow ``c`` for agent ``k`` at market price ``price0``."""
    total, before, after = deflated_integrals(c, xi, tau_index, grid.dt)
    return BubbleReport.from_integrals(asset, k, price0, total, before, after)


def riskless_growth(xi, r, grid: TimeGrid) -> np.ndarray:
    """Per-path ``xi_T S_0T / xi_0`` with ``S_0T = exp(int_0^T r)`` by the trapezoidal rule.

    NaN on paths where ``r`` is undefined somewhere on the grid.
    """
    xi = np.asarray(xi, dtype=float)
    growth = np.trapezoid(np.asarray(r, dtype=float), dx=grid.dt, axis=-1)
    return xi[..., -1] * np.exp(growth) / xi[..., 0]


def riskless_bubble(xi, r, tau_index, grid: TimeGrid, *, complement: bool = False) -> MonteCarloEstimate:
    """Bubble ``1 - xi_0^{-1} E[xi_T S_0T 1{tau_k > T}]`` on the riskless asset (``S_00 = 1``).

    With ``complement`` the estimator is ``xi_0^{-1} E[xi_T S_0T 1{tau_k <= T}]``
    instead, which is equal when ``xi S_0`` is a true martingale under the
    reference measure and has much lower variance when bankruptcy is rare.
    It needs ``r`` finite on every path.
    """
    survived = np.asarray(tau_index) > grid.n_steps
    G = riskless_growth(xi, r, grid)
    if complement:
        if np.any(~np.isfinite(G)):
            raise ValidationError("complement form needs the short rate on every path")
        return MonteCarloEstimate.from_samples(np.where(survived, 0.0, G))
    return MonteCarloEstimate.from_samples(1.0 - np.where(survived, G, 0.0))


def hitting_probability(x, horizon):
    """``P(min of x + B over [0, horizon] <= -1)`` for a standard Brownian ``B``.

    Equals ``2 N(-(1 + x) / sqrt(horizon))``, and 1 once ``x <= -1``.
    """
    x = np.asarray(x, dtype=float)
    horizon = np.asarray(horizon, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = 2.0 * ndtr(-(1.0 + x) / np.sqrt(horizon))
    p = np.where(horizon > 0, p, 0.0)
    return np.where(x <= -1.0, 1.0, p)


def conditional_bubble_ex4(
    k: int,
    X,
    Z,
    xi,
    w,
    rho: float,
    grid: TimeGrid,
    j: int,
    *,
    v=(1.0, 1.0),
    n_quad: int = 2000,
) -> np.ndarray:
    """Market-portfolio bubble of agent ``k`` at grid index ``j`` in the two-stock economy.

    ``B_t = w Z_lt / (xi_t eta(0)) int_t^T P(tau_k <= s | F_t) e^{-rho s} ds`` with
    ``l`` the other agent, and the hitting probability in closed form.  The
    time integral is a trapezoidal rule with ``n_quad`` steps on ``[t, T]``.
    NaN on paths with ``tau_k <= t``.

    ``X`` has shape ``(..., n_steps + 1, 2)``; ``Z`` is the pair of density
    arrays, each ``(..., n_steps + 1)``.
    """
    w = np.asarray(w, dtype=float)
    if not np.allclose(np.asarray(v, dtype=float), 1.0) or w.size != 2 or w[0] != w[1]:
        raise ValidationError("the closed form needs v = (1, 1) and w_1 = w_2", "v" if w.size == 2 and w[0] == w[1] else "w")
    if k not in (0, 1):
        raise ValidationError(f"agent index must be 0 or 1, got {k}", "k")
    ell = 1 - k
    t = grid.times[j]
    eta0 = -math.expm1(-rho * grid.T) / rho
    x = np.asarray(X)[..., j, k]
    Zk = np.asarray(Z[k])[..., j]
    Zl = np.asarray(Z[ell])[..., j]
    s = np.linspace(t, grid.T, n_quad + 1)
    p = hitting_probability(x[..., None], s - t)
    integral = np.trapezoid(p * np.exp(-rho * s), s, axis=-1)
    # states before t: tau_k <= s is already decided for s < t, contributing nothing
    with np.errstate(divide="ignore", invalid="ignore"):
        out = w[0] * Zl / (np.asarray(xi)[..., j] * eta0) * integral
    return np.where(Zk > 0, out, np.nan)
