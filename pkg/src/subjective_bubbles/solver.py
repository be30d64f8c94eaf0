"""General-utility aggregation and the Monte Carlo budget solve for the multipliers ``y_k``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .beliefs import DensityPath
from .errors import ConvergenceError, SolvencyError, ValidationError
from .market import DividendPath
from .paths import TimeGrid


@dataclass(frozen=True)
class Utility:
    """CRRA utility with relative risk aversion ``gamma``; ``gamma = 1`` is log.

    The inverse marginal utility is ``I(y) = y ** (-1 / gamma)``.
    """

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValidationError(f"risk aversion must be positive, got {self.gamma}", "gamma")

    @classmethod
    def log(cls) -> "Utility":
        return cls(1.0)

    @classmethod
    def power(cls, gamma: float) -> "Utility":
        return cls(float(gamma))

    @property
    def is_log(self) -> bool:
        return self.gamma == 1.0

    def inverse_marginal(self, y):
        return np.power(y, -1.0 / self.gamma)


@dataclass(frozen=True)
class AgentSpec:
    """Initial wealth, utility and a belief tag with its parameters."""

    w: float
    utility: Utility = field(default_factory=Utility.log)
    belief: str = "reference"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.w > 0:
            raise ValidationError(f"initial wealth must be positive, got {self.w}", "w")


def _log_nu(nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float)
    if np.any(nu < 0):
        raise ValidationError("weights nu_k must be nonnegative", "nu")
    with np.errstate(divide="ignore"):
        return np.log(nu)


def phi_aggregate(y, nu: Sequence, utilities: Sequence[Utility]):
    """``Phi(y; nu) = sum over nu_k > 0 of I_k(y / nu_k)``.

    ``nu`` has the agent on its first axis; extra axes broadcast against ``y``.
    """
    log_nu = _log_nu(nu)
    log_y = np.log(np.asarray(y, dtype=float))
    total = 0.0
    for k, u in enumerate(utilities):
        total = total + np.exp(-(log_y - log_nu[k]) / u.gamma)
    return total


def phi_inverse(x, nu: Sequence, utilities: Sequence[Utility], *, tol: float = 1e-14, max_iter: int = 100):
    """Unique ``y`` with ``Phi(y; nu) = x``.

    Works on ``u = log y``, where ``log Phi`` is convex and decreasing.  The
    root is bracketed by ``[max_k(log nu_k - g_k log x), max_k(log nu_k + g_k log(K / x))]``
    and found by Newton steps from the left end, falling back to bisection
    whenever a step leaves the bracket.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValidationError("phi_inverse needs x > 0", "x")
    log_nu = _log_nu(nu)
    K = len(utilities)
    if log_nu.shape[0] != K:
        raise ValidationError("one utility per weight is required")
    g = np.array([u.gamma for u in utilities]).reshape((K,) + (1,) * (log_nu.ndim - 1))
    log_x = np.log(x)
    lo = np.max(log_nu - g * log_x, axis=0)
    if np.any(np.isneginf(lo)):
        raise SolvencyError("all weights nu_k vanish; Phi is identically zero")
    active = np.isfinite(log_nu).sum(axis=0)
    hi = np.max(np.where(np.isfinite(log_nu), log_nu + g * (np.log(active) - log_x), -np.inf), axis=0)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo, hi = lo.astype(float).copy(), hi.astype(float).copy()
    u = lo.copy()
    for _ in range(max_iter):
        terms = np.exp(-(u - log_nu) / g)
        phi = terms.sum(axis=0)
        f = np.log(phi) - log_x
        dphi = -(terms / g).sum(axis=0) / phi
        lo = np.where(f > 0, u, lo)
        hi = np.where(f <= 0, u, hi)
        step = u - f / dphi
        bad = ~((step >= lo) & (step <= hi))
        new = np.where(bad, 0.5 * (lo + hi), step)
        done = np.abs(new - u) <= tol * np.maximum(1.0, np.abs(u))
        u = new
        if np.all(done):
            out = np.exp(u)
            return float(out) if out.ndim == 0 else out
    raise ConvergenceError("phi_inverse did not converge", float(np.max(np.abs(f))))


Sampler = Callable[[int, int, int], tuple[DividendPath, Sequence[DensityPath]]]


@dataclass
class SolverResult:
    """Multipliers with their Monte Carlo budgets.

    ``xi`` holds the state price density of the first ``len(xi)`` paths at the
    solution; :meth:`xi_paths` recomputes it for any other range.
    """

    y: np.ndarray
    budgets: np.ndarray
    residual: float
    iterations: int
    xi: np.ndarray
    agents: list[AgentSpec]
    rho: float
    sampler: Sampler = field(repr=False)
    seed: int = 0

    def xi_paths(self, start: int, count: int) -> np.ndarray:
        D, dens = self.sampler(self.seed, start, count)
        return _xi(D, dens, self.y, self.agents, self.rho)


def _nu(dens, y, rho, grid):
    disc = np.exp(-rho * grid.times)
    return np.stack([d.Z * disc / yk for d, yk in zip(dens, y)])


def _xi(D, dens, y, agents, rho):
    utilities = [a.utility for a in agents]
    nu = _nu(dens, y, rho, D.grid)
    if all(u.is_log for u in utilities):
        mass = nu.sum(axis=0)
        if np.any(mass <= 0):
            raise SolvencyError("no solvent agent at some grid point")
        return mass / D.values
    return phi_inverse(D.values, nu, utilities)


def _budgets(D, dens, y, agents, rho):
    grid = D.grid
    utilities = [a.utility for a in agents]
    nu = _nu(dens, y, rho, grid)
    xi = _xi(D, dens, y, agents, rho)
    out = np.empty(len(agents))
    for k, u in enumerate(utilities):
        if u.is_log:
            integrand = nu[k]
        else:
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                c = u.inverse_marginal(xi / nu[k])
            integrand = np.where(nu[k] > 0, xi * c, 0.0)
        per_path = np.trapezoid(integrand, dx=grid.dt, axis=-1)
        out[k] = per_path.sum()
    return out, xi


def solve_multipliers_general(
    agents: Sequence[AgentSpec],
    sampler: Sampler,
    rho: float,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    *,
    damping: float = 0.5,
    max_iter: int = 200,
    tol: float = 1e-6,
    chunk_size: int = 1000,
    cache_bytes: int = 1 << 30,
    keep_paths: int = 100,
    y0: Sequence[float] | None = None,
) -> SolverResult:
    """Solve ``E[int_0^T xi_t c_kt dt] = w_k`` for the multipliers ``y_k``.

    ``xi = Phi^{-1}(D; Z_k e^{-rho t} / y_k)`` and ``c_k = I_k(y_k e^{rho t} xi / Z_k)``.
    The map is iterated as ``log y <- log y + damping * log(budget / w)`` on a
    fixed Monte Carlo sample drawn by ``sampler(seed, start, count)``.
    Chunks are cached in memory while they fit in ``cache_bytes``; beyond
    that they are regenerated each iteration from the same seeds.
    """
    agents = list(agents)
    if not agents:
        raise ValidationError("at least one agent is required")
    if not rho > 0:
        raise ValidationError(f"rho must be positive, got {rho}", "rho")
    w = np.array([a.w for a in agents])
    eta0 = -math.expm1(-rho * grid.T) / rho
    y = np.asarray(y0, dtype=float).copy() if y0 is not None else eta0 / w

    chunks = [(s, min(chunk_size, n_paths - s)) for s in range(0, n_paths, chunk_size)]
    cache: dict[int, tuple] = {}
    used = 0

    def chunk(i):
        nonlocal used
        if i in cache:
            return cache[i]
        start, count = chunks[i]
        data = sampler(seed, start, count)
        size = data[0].values.nbytes * (1 + len(data[1]))
        if used + size <= cache_bytes:
            cache[i] = data
            used += size
        return data

    residual = math.inf
    for it in range(1, max_iter + 1):
        total = np.zeros(len(agents))
        for i in range(len(chunks)):
            D, dens = chunk(i)
            b, _ = _budgets(D, dens, y, agents, rho)
            total += b
        budgets = total / n_paths
        residual = float(np.max(np.abs(budgets - w) / w))
        if residual < tol:
            break
        y = y * np.exp(damping * np.log(budgets / w))
    else:
        raise ConvergenceError(f"budget solve did not converge in {max_iter} iterations", residual)

    D, dens = chunk(0)
    xi = _xi(D, dens, y, agents, rho)[: min(keep_paths, n_paths)]
    return SolverResult(y, budgets, residual, it, xi, agents, rho, sampler, seed)
