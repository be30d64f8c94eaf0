"""Dividend processes: geometric aggregate dividend and the two-stock share split."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .paths import BrownianPath, TimeGrid

PSI_CLAMP = 1e-12


@dataclass(frozen=True)
class DividendPath:
    """Positive dividend rate on ``grid``; ``values`` has shape ``(..., n_steps + 1)``.

    ``a`` is the drift and ``v`` the volatility vector of ``dD / D``.
    """

    grid: TimeGrid
    values: np.ndarray
    a: float
    v: np.ndarray

    @property
    def D0(self) -> float:
        return float(np.ravel(self.values[..., 0])[0])

    @property
    def vol(self) -> float:
        """Scalar volatility ``|v|`` of log D."""
        return float(np.linalg.norm(self.v))


@dataclass(frozen=True)
class SharePath:
    """Fraction ``psi_1`` of the aggregate dividend paid by stock 1."""

    grid: TimeGrid
    values: np.ndarray
    v_psi: np.ndarray


def _as_vector(v, dim: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (dim,):
        raise ValidationError(f"{name} must have length {dim}, got shape {arr.shape}", name)
    return arr


def gbm_dividend(grid: TimeGrid, X: BrownianPath, D0: float, a: float, v) -> DividendPath:
    """``D_t = D0 exp(v . X_t + (a - |v|^2 / 2) t)``, exact on grid points."""
    if not D0 > 0:
        raise ValidationError(f"D0 must be positive, got {D0}", "D0")
    v = _as_vector(v, X.dim, "v")
    drift = (a - 0.5 * float(v @ v)) * grid.times
    log_d = X.values @ v + drift
    return DividendPath(grid, D0 * np.exp(log_d), float(a), v)


def share_process(grid: TimeGrid, X: BrownianPath, psi0: float, v_psi) -> SharePath:
    """Euler scheme for ``d psi = psi (1 - psi) v_psi . dX``, clamped inside (0, 1)."""
    if not 0.0 < psi0 < 1.0:
        raise ValidationError(f"psi0 must lie in (0, 1), got {psi0}", "psi0")
    v_psi = _as_vector(v_psi, X.dim, "v_psi")
    shocks = X.increments @ v_psi
    out = np.empty(X.values.shape[:-1])
    out[..., 0] = psi0
    psi = np.full(out.shape[:-1], psi0)
    for j in range(grid.n_steps):
        psi = psi + psi * (1.0 - psi) * shocks[..., j]
        np.clip(psi, PSI_CLAMP, 1.0 - PSI_CLAMP, out=psi)
        out[..., j + 1] = psi
    return SharePath(grid, out, v_psi)


def split_dividends(D: DividendPath, psi: SharePath) -> tuple[DividendPath, DividendPath]:
    """``D_1 = psi D`` and ``D_2 = D - D_1``, so the pair sums to ``D`` exactly."""
    if D.grid != psi.grid or D.values.shape != psi.values.shape:
        raise ValidationError("dividend and share paths live on different grids")
    d1 = psi.values * D.values
    d2 = D.values - d1
    # nudge d1 where rounding broke d1 + d2 == D
    bad = (d1 + d2) != D.values
    if np.any(bad):
        d1 = np.where(bad, D.values - d2, d1)
    # individual dividends have state-dependent coefficients; none are recorded
    nan_v = np.full_like(D.v, np.nan)
    return DividendPath(D.grid, d1, float("nan"), nan_v), DividendPath(D.grid, d2, float("nan"), nan_v)
