"""Equilibrium with logarithmic investors, and optimal trading strategies.

All per-path arrays have time on the last axis (vector quantities carry a
trailing dimension axis after time).  Agent-indexed arrays put the agent on
the leading axis: ``c[k]`` is agent ``k``'s consumption.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .beliefs import DensityPath
from .errors import SolvencyError, ValidationError
from .market import DividendPath
from .paths import TimeGrid


def eta(t, rho: float, T: float):
    """Annuity factor ``(1 - exp(-rho (T - t))) / rho``."""
    if not rho > 0:
        raise ValidationError(f"rho must be positive, got {rho}", "rho")
    t = np.asarray(t, dtype=float)
    out = -np.expm1(-rho * (T - t)) / rho
    return float(out) if out.ndim == 0 else out


def _weighted_density_sum(densities: Sequence[DensityPath], weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if len(densities) != weights.size:
        raise ValidationError("one weight per density is required")
    if np.any(weights <= 0):
        raise ValidationError("all initial wealths w_k must be positive", "w")
    total = np.zeros_like(densities[0].Z)
    for w, d in zip(weights, densities):
        total = total + w * d.Z
    return total


def log_state_price_density(
    D: DividendPath,
    densities: Sequence[DensityPath],
    weights,
    rho: float,
    *,
    allow_extinction: bool = False,
) -> np.ndarray:
    """``xi_t = exp(-rho t) sum_k w_k Z_kt / (D_t eta(0))``.

    Raises :class:`SolvencyError` if every density vanishes at some grid
    point, unless ``allow_extinction`` is set, in which case ``xi`` is 0 there.
    """
    grid = D.grid
    mass = _weighted_density_sum(densities, weights)
    if not allow_extinction and np.any(mass <= 0):
        raise SolvencyError("all agents are bankrupt at some grid point; no agent remains solvent")
    return np.exp(-rho * grid.times) * mass / (D.values * eta(0.0, rho, grid.T))


def log_consumption_wealth(
    xi: np.ndarray, density: DensityPath, w_k: float, rho: float
) -> tuple[np.ndarray, np.ndarray]:
    """Consumption ``w_k Z_k / (e^{rho t} xi eta(0))`` and wealth ``c eta(t)``.

    Both are exactly zero from the bankruptcy index on.  Where ``xi`` is zero
    (no solvent agent) the result is NaN.
    """
    grid = density.grid
    t = grid.times
    with np.errstate(divide="ignore", invalid="ignore"):
        c = w_k * density.Z / (np.exp(rho * t) * xi * eta(0.0, rho, grid.T))
    c = np.where(density.alive(), c, 0.0)
    c = np.where(xi > 0, c, np.nan)
    return c, c * eta(t, rho, grid.T)


def market_portfolio_price(D: DividendPath, rho: float) -> np.ndarray:
    """``S_bar_t = D_t eta(t)``."""
    return D.values * eta(D.grid.times, rho, D.grid.T)


def aggregate_gamma(densities: Sequence[DensityPath], weights) -> np.ndarray:
    """Loading of ``sum_k w_k Z_k``: ``sum_k w_k Z_k gamma_k / sum_k w_k Z_k``.

    Bankrupt agents contribute nothing.  NaN where no agent is solvent.
    """
    weights = np.asarray(weights, dtype=float)
    mass = _weighted_density_sum(densities, weights)
    num = np.zeros_like(densities[0].gamma)
    for w, d in zip(weights, densities):
        g = np.where(d.alive()[..., None], d.gamma, 0.0)
        num = num + (w * d.Z)[..., None] * g
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where((mass > 0)[..., None], num / mass[..., None], np.nan)


def rate_and_mpr(a: float, v, gamma: np.ndarray, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """``theta = v - gamma`` and ``r = rho + a - v . theta``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if gamma.shape[-1] != v.size:
        raise ValidationError(f"loading dimension {gamma.shape[-1]} does not match v of length {v.size}")
    theta = v - gamma
    r = rho + a - theta @ v
    return r, theta


def agent_mpr(theta: np.ndarray, density: DensityPath) -> np.ndarray:
    """``theta_k = theta + gamma_k``; NaN from the bankruptcy index on."""
    return theta + density.gamma


def optimal_strategy(W_k: np.ndarray, theta_k: np.ndarray, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Riskless amount ``phi = W - 1.pi`` and stock amounts ``pi = W (sigma^T)^{-1} theta_k``.

    ``sigma`` is a positive scalar (one stock) or an invertible matrix with
    stock ``i``'s diffusion in row ``i``.  For a scalar ``sigma`` the stock
    amount is returned without a trailing axis.  Both are zero wherever
    ``W_k`` is zero.
    """
    sigma = np.asarray(sigma, dtype=float)
    exposure = W_k[..., None] * theta_k
    holding = (W_k > 0)
    if sigma.ndim == 0 or sigma.size == 1:
        s = float(sigma.ravel()[0])
        if s == 0:
            raise ValidationError("price diffusion is singular (sigma = 0)", "sigma")
        pi = exposure[..., 0] / s
        pi = np.where(holding, pi, 0.0)
        phi = np.where(holding, W_k - pi, 0.0)
        return phi, pi
    if abs(np.linalg.det(sigma)) < 1e-14:
        raise ValidationError("price diffusion matrix is singular", "sigma")
    pi = np.linalg.solve(sigma.T, exposure[..., None])[..., 0]
    pi = np.where(holding[..., None], pi, 0.0)
    phi = np.where(holding, W_k - pi.sum(axis=-1), 0.0)
    return phi, pi


def clear_exactly(parts: np.ndarray, total: np.ndarray, alive: np.ndarray) -> np.ndarray:
    """Adjust one alive agent per point so that ``parts.sum(axis=0) == total`` in floating point.

    The absorbing agent is the alive one with the largest ``|part|``; its
    entry becomes ``total - sum(others)``.  Other entries are left untouched
    unless rounding blocks exactness.  For two agents the other entry is then
    recomputed as ``total - absorbed`` (exact when the absorbed value lies
    within a factor two of the total), trying the absorbed value and its
    nearest few neighbours.  Points where no exact split is representable
    (offsetting positions much larger than the total) keep the nearest
    values; callers can detect them by re-checking the sum.
    """
    parts = np.array(parts, dtype=float)
    K = parts.shape[0]
    valid = np.isfinite(total) & alive.any(axis=0)
    mag = np.where(alive, np.abs(parts), -1.0)
    absorber = np.argmax(mag, axis=0)
    onehot = np.arange(K).reshape((K,) + (1,) * (parts.ndim - 1)) == absorber
    others = np.where(onehot, 0.0, parts)
    absorbed = total - others.sum(axis=0)
    parts = np.where(onehot & valid, absorbed, parts)
    if K == 2:
        parts = _repair_pairs(parts, total, valid, absorber)
    return parts


def _repair_pairs(parts, total, valid, absorber):
    bad = valid & (parts[0] + parts[1] != total)
    if not np.any(bad):
        return parts
    idx = np.nonzero(bad)
    a = absorber[idx]
    sub = parts[(slice(None),) + idx]
    absorbed = np.take_along_axis(sub, a[None], axis=0)[0]
    other = np.take_along_axis(sub, (1 - a)[None], axis=0)[0]
    tot = total[idx]
    fixed = np.zeros(other.shape, dtype=bool)
    # recompute the other entry from a (possibly nudged) absorbed value; the
    # difference is exact whenever the absorbed value is within a factor two of the total
    start = absorbed.copy()
    for step in (0, 1, -1, 2, -2, 3, -3, 4, -4):
        cand_abs = start.copy()
        direction = np.inf if step > 0 else -np.inf
        for _ in range(abs(step)):
            cand_abs = np.nextafter(cand_abs, direction)
        cand_other = tot - cand_abs
        ok = (~fixed) & (cand_other + cand_abs == tot) & (cand_abs + cand_other == tot)
        absorbed = np.where(ok, cand_abs, absorbed)
        other = np.where(ok, cand_other, other)
        fixed |= ok
        if fixed.all():
            break
    parts[(0,) + idx] = np.where(a == 0, absorbed, other)
    parts[(1,) + idx] = np.where(a == 0, other, absorbed)
    return parts


def round_to_resolution(total: np.ndarray, parts: np.ndarray) -> np.ndarray:
    """Round ``total`` to a multiple of the ulp of the largest ``|part|`` where that ulp is coarser.

    Two offsetting positions much larger than their sum can only add up to
    it exactly in binary floating point when the sum carries no bits below
    their own resolution.  Rounding the total there (by at most half an ulp
    of the largest position) makes an exact split representable.  Elsewhere
    the total is returned unchanged.
    """
    total = np.asarray(total, dtype=float)
    with np.errstate(invalid="ignore"):
        biggest = np.nanmax(np.abs(parts), axis=0, initial=0.0)
    u = np.spacing(biggest)
    coarse = u > np.spacing(np.abs(total))
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        rounded = np.round(total / u) * u
    return np.where(coarse & np.isfinite(rounded), rounded, total)


@dataclass
class EquilibriumBundle:
    """Equilibrium processes on a batch of paths.

    ``valid`` marks grid points where some agent is solvent; every quantity
    except ``xi`` and ``S_bar`` is NaN outside it.  Agent arrays are indexed
    ``[k, ...]``.  ``pi`` and ``phi`` are stock and riskless amounts; for a
    single stock ``pi[k]`` has no trailing axis.  ``exposure[k] = W_k theta_k``
    is the dollar exposure to each Brownian motion; the exposures sum to
    ``exposure_total``, which is ``S_bar * v`` up to the rounding described in
    :func:`round_to_resolution`.
    """

    grid: TimeGrid
    D: DividendPath
    densities: list[DensityPath]
    weights: np.ndarray
    rho: float
    xi: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    theta_k: list[np.ndarray]
    c: np.ndarray
    W: np.ndarray
    exposure: np.ndarray
    exposure_total: np.ndarray
    phi: np.ndarray | None
    pi: np.ndarray | None
    S_bar: np.ndarray
    sigma: np.ndarray
    y: np.ndarray
    valid: np.ndarray

    @property
    def K(self) -> int:
        return len(self.densities)

    def alive(self, k: int) -> np.ndarray:
        return self.densities[k].alive()


def build_log_bundle(
    D: DividendPath,
    densities: Sequence[DensityPath],
    weights,
    rho: float,
    *,
    allow_extinction: bool = False,
) -> EquilibriumBundle:
    """Assemble the log-investor equilibrium with exact market clearing.

    Consumption, wealth, holdings and exposures are cleared by
    :func:`clear_exactly`, so ``sum_k c_k == D``, ``sum_k W_k == S_bar``,
    ``sum_k pi_k == S_bar`` and ``sum_k phi_k == 0`` hold bit-for-bit at every
    valid point.  ``S_bar`` is ``D eta`` except where leveraged positions
    force it onto a coarser binary grid (see :func:`round_to_resolution`).  ``allow_extinction`` permits grid
    points after every agent's bankruptcy; they are flagged invalid instead
    of raising.
    """
    grid = D.grid
    weights = np.asarray(weights, dtype=float)
    K = len(densities)
    xi = log_state_price_density(D, densities, weights, rho, allow_extinction=allow_extinction)
    valid = xi > 0
    eta_t = eta(grid.times, rho, grid.T)
    S_bar = D.values * eta_t

    gamma = aggregate_gamma(densities, weights)
    r, theta = rate_and_mpr(D.a, D.v, gamma, rho)
    theta_k = [agent_mpr(theta, d) for d in densities]

    alive = np.stack([d.alive() for d in densities]) & valid
    c = np.stack([log_consumption_wealth(xi, d, w, rho)[0] for d, w in zip(densities, weights)])
    c = np.where(valid, np.where(alive, c, 0.0), np.nan)
    c = clear_exactly(c, np.where(valid, D.values, np.nan), alive)
    W = np.where(valid, c * eta_t, np.nan)

    v = np.atleast_1d(D.v)
    exposure = np.stack([np.where(alive[k][..., None], W[k][..., None] * theta_k[k], 0.0) for k in range(K)])
    exposure = np.where(valid[None, ..., None], exposure, np.nan)

    phi = pi = None
    if v.size == 1:
        s = float(v[0])
        pi = np.where(alive, exposure[..., 0] / s, 0.0)
        pi = np.where(valid, pi, np.nan)
        S_bar = round_to_resolution(S_bar, pi)
    W = clear_exactly(W, np.where(valid, S_bar, np.nan), alive)
    exposure_total = np.stack(
        [round_to_resolution(S_bar * v[i], exposure[..., i]) for i in range(v.size)], axis=-1
    )
    for i in range(v.size):
        exposure[..., i] = clear_exactly(exposure[..., i], np.where(valid, exposure_total[..., i], np.nan), alive)
    if pi is not None:
        pi = clear_exactly(pi, np.where(valid, S_bar, np.nan), alive)
        phi = np.where(alive, W - pi, 0.0)
        phi = np.where(valid, phi, np.nan)
        phi = clear_exactly(phi, np.where(valid, 0.0, np.nan), alive)

    nan = ~valid
    r = np.where(nan, np.nan, r)
    theta = np.where(nan[..., None], np.nan, theta)
    return EquilibriumBundle(
        grid=grid,
        D=D,
        densities=list(densities),
        weights=weights,
        rho=rho,
        xi=xi,
        r=r,
        theta=theta,
        gamma=gamma,
        theta_k=theta_k,
        c=c,
        W=W,
        exposure=exposure,
        exposure_total=exposure_total,
        phi=phi,
        pi=pi,
        S_bar=S_bar,
        sigma=v.copy(),
        y=eta(0.0, rho, grid.T) / weights,
        valid=valid,
    )
