"""Time grids, Brownian drivers and path-level primitives.

Arrays carrying a sampled process put time on the last axis (or, for
vector-valued processes, the second-to-last axis followed by the vector
dimension).  Any leading axes index independent paths, so every function
here works for a single path as well as for a batch.

Seeding is counter based: path ``i`` of a run with base seed ``s`` is drawn
from a Philox stream keyed by ``path_seed(s, i)``.  The value of a path never
depends on which worker generated it or in what order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ValidationError

_MASK64 = (1 << 64) - 1

Direction = Literal["below", "at-or-below", "above", "at-or-above"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j * T / n_steps`` on ``[0, T]``."""

    T: float
    n_steps: int

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        # linspace pins both endpoints exactly
        return np.linspace(0.0, self.T, self.n_steps + 1)

    def __len__(self) -> int:
        return self.n_steps + 1

    def index_of(self, t: float) -> int:
        """Nearest grid index to time ``t``."""
        if not 0.0 <= t <= self.T * (1 + 1e-12):
            raise ValidationError(f"time {t} outside [0, {self.T}]", "t")
        return int(round(t / self.dt))

    def coarsen(self, factor: int) -> "TimeGrid":
        if factor < 1 or self.n_steps % factor:
            raise ValidationError(f"factor {factor} does not divide n_steps={self.n_steps}")
        return TimeGrid(self.T, self.n_steps // factor)


def make_time_grid(T: float, n_steps: int) -> TimeGrid:
    if not T > 0:
        raise ValidationError(f"horizon T must be positive, got {T}", "T")
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValidationError(f"n_steps must be a positive integer, got {n_steps}", "n_steps")
    return TimeGrid(float(T), int(n_steps))


@dataclass(frozen=True)
class BrownianPath:
    """Sampled standard Brownian motion; ``values`` has shape ``(..., n_steps + 1, dim)``."""

    grid: TimeGrid
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[-1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=-2)

    def coordinate(self, k: int) -> np.ndarray:
        return self.values[..., k]

    def coarsen(self, factor: int) -> "BrownianPath":
        """Restriction to every ``factor``-th grid point (same underlying path)."""
        return BrownianPath(self.grid.coarsen(factor), self.values[..., ::factor, :])

    def swap(self, i: int = 0, j: int = 1) -> "BrownianPath":
        """Same paths with coordinates ``i`` and ``j`` exchanged."""
        order = list(range(self.dim))
        order[i], order[j] = order[j], order[i]
        return BrownianPath(self.grid, self.values[..., order])


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def path_seed(base_seed: int, i: int) -> int:
    """Seed of path ``i``: ``base_seed XOR splitmix64(i)``."""
    return (int(base_seed) & _MASK64) ^ _splitmix64(int(i))


def _generator(seed: int, stream: int = 0) -> np.random.Generator:
    # the high counter word separates the Gaussian stream from auxiliary uniforms
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64, counter=[0, 0, 0, stream]))


def sample_brownian(grid: TimeGrid, dim: int, seed: int) -> BrownianPath:
    """One Brownian path; bit-identical for identical ``(grid, dim, seed)``."""
    if int(dim) != dim or dim < 1:
        raise ValidationError(f"dim must be a positive integer, got {dim}", "dim")
    z = _generator(seed).standard_normal((grid.n_steps, dim))
    values = np.zeros((grid.n_steps + 1, dim))
    np.cumsum(z * math.sqrt(grid.dt), axis=0, out=values[1:])
    return BrownianPath(grid, values)


def sample_brownian_paths(grid: TimeGrid, dim: int, base_seed: int, start: int, count: int) -> BrownianPath:
    """Paths ``start .. start + count - 1`` of the run keyed by ``base_seed``."""
    if int(dim) != dim or dim < 1:
        raise ValidationError(f"dim must be a positive integer, got {dim}", "dim")
    scale = math.sqrt(grid.dt)
    values = np.zeros((count, grid.n_steps + 1, dim))
    for row, i in enumerate(range(start, start + count)):
        z = _generator(path_seed(base_seed, i)).standard_normal((grid.n_steps, dim))
        np.cumsum(z * scale, axis=0, out=values[row, 1:])
    return BrownianPath(grid, values)


def sample_uniforms(grid: TimeGrid, base_seed: int, start: int, count: int, stream: int = 1) -> np.ndarray:
    """Per-step uniforms for the bridge-corrected hitting test, shape ``(count, n_steps)``.

    Drawn from counter block ``stream`` (at least 1), disjoint from the
    Gaussian stream of the same path.
    """
    if stream < 1:
        raise ValidationError("stream 0 is reserved for the Gaussian increments", "stream")
    out = np.empty((count, grid.n_steps))
    for row, i in enumerate(range(start, start + count)):
        out[row] = _generator(path_seed(base_seed, i), stream=stream).random(grid.n_steps)
    return out


def running_max(p) -> np.ndarray:
    return np.maximum.accumulate(np.asarray(p, dtype=float), axis=-1)


def _crossed(p: np.ndarray, level, direction: Direction) -> np.ndarray:
    if direction == "below":
        return p < level
    if direction == "at-or-below":
        return p <= level
    if direction == "above":
        return p > level
    if direction == "at-or-above":
        return p >= level
    raise ValidationError(f"unknown crossing direction {direction!r}", "direction")


def bridge_running_max(x, dt: float, vol, uniforms) -> np.ndarray:
    """Running maximum of a Brownian path including the maxima between grid points.

    ``x`` holds grid values of a Brownian motion with volatility ``vol`` (any
    drift).  The maximum over step ``j -> j+1`` is drawn from its exact law
    given both endpoints, ``(x_j + x_{j+1} + sqrt((x_{j+1} - x_j)^2 - 2 vol^2 dt log U_j)) / 2``,
    using ``uniforms[..., j]``.  The result is the running maximum of the
    continuous path at each grid point, exact in law.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(uniforms, dtype=float)
    if dt <= 0 or not vol > 0:
        raise ValidationError("bridge maximum needs dt > 0 and vol > 0")
    if u.shape != x.shape[:-1] + (x.shape[-1] - 1,):
        raise ValidationError(f"need one uniform per step, got shape {u.shape} for paths {x.shape}")
    d = x[..., 1:] - x[..., :-1]
    step_max = 0.5 * (x[..., :-1] + x[..., 1:] + np.sqrt(d * d - 2.0 * vol * vol * dt * np.log1p(-u)))
    out = np.empty_like(x)
    out[..., 0] = x[..., 0]
    out[..., 1:] = np.maximum(step_max, x[..., 1:])
    return np.maximum.accumulate(out, axis=-1)


def crossing_indices(p, level, direction: Direction = "at-or-below") -> np.ndarray:
    """First index along the last axis where the predicate holds.

    Paths that never cross get the sentinel ``p.shape[-1]`` (one past the
    last grid index), so ``j < index`` is the alive mask.
    """
    p = np.asarray(p, dtype=float)
    hit = _crossed(p, level, direction)
    n = p.shape[-1]
    first = np.argmax(hit, axis=-1)
    return np.where(hit.any(axis=-1), first, n)


def first_crossing_index(p, level: float, direction: Direction = "at-or-below") -> int | None:
    """Smallest ``j`` with ``p[j]`` satisfying the crossing predicate, else ``None``."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValidationError("first_crossing_index expects a single path; use crossing_indices")
    j = int(crossing_indices(p, level, direction))
    return None if j == p.size else j


def bridge_crossing_correction(x0, x1, barrier, dt: float, vol) -> np.ndarray:
    """Probability that a Brownian bridge from ``x0`` to ``x1`` dips to ``barrier``.

    Barrier below both endpoints; endpoints at or beyond it give probability 1.
    For an upper barrier pass negated arguments.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    vol = np.asarray(vol, dtype=float)
    if dt <= 0 or np.any(vol <= 0):
        raise ValidationError("bridge correction needs dt > 0 and vol > 0")
    a = x0 - barrier
    b = x1 - barrier
    with np.errstate(over="ignore"):
        prob = np.exp(-2.0 * a * b / (vol * vol * dt))
    return np.where((a <= 0) | (b <= 0), 1.0, prob)


def bridge_crossing_indices(x, barrier, dt: float, vol, uniforms, direction: Direction = "at-or-below") -> np.ndarray:
    """Hitting index with grid detection refined by a randomized bridge test.

    A crossing inside step ``j -> j+1`` is declared when ``uniforms[..., j]``
    falls below the bridge probability; the hitting index is then ``j + 1``.
    ``barrier`` may be a scalar or an array aligned with ``x`` (step ``j``
    uses the barrier at ``j``).
    """
    x = np.asarray(x, dtype=float)
    grid_hit = crossing_indices(x, barrier, direction)
    barrier = np.broadcast_to(np.asarray(barrier, dtype=float), x.shape)
    if direction in ("above", "at-or-above"):
        x, barrier = -x, -barrier
    prob = bridge_crossing_correction(x[..., :-1], x[..., 1:], barrier[..., :-1], dt, vol)
    step_hit = np.asarray(uniforms) < prob
    n = x.shape[-1]
    first_step = np.where(step_hit.any(axis=-1), np.argmax(step_hit, axis=-1) + 1, n)
    return np.minimum(grid_hit, first_step)


def discrete_stochastic_exponential(loading, driver: BrownianPath) -> np.ndarray:
    """Exact-per-step exponential ``E[j+1] = E[j] exp(g_j . dX_j - |g_j|^2 dt / 2)``.

    ``loading`` has shape ``(..., n_steps, dim)`` (or ``n_steps + 1``, the last
    row being ignored).  Steps with a NaN loading leave the exponential
    undefined (NaN) from there on.
    """
    g = np.asarray(loading, dtype=float)
    n = driver.grid.n_steps
    g = g[..., :n, :]
    dx = driver.increments
    incr = np.sum(g * dx, axis=-1) - 0.5 * np.sum(g * g, axis=-1) * driver.grid.dt
    out = np.ones(incr.shape[:-1] + (n + 1,))
    np.exp(np.cumsum(incr, axis=-1), out=out[..., 1:])
    return out
