"""Monte Carlo estimates and weighted two-sample statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Sample mean with its standard error ``std / sqrt(n)``."""

    mean: float
    stderr: float
    n: int

    @classmethod
    def from_samples(cls, samples) -> "MonteCarloEstimate":
        x = np.asarray(samples, dtype=float).ravel()
        if x.size == 0:
            raise ValidationError("cannot estimate from an empty sample")
        n = x.size
        mean = float(x.mean())
        stderr = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean, stderr, n)

    def zscore(self, target: float = 0.0) -> float:
        diff = self.mean - target
        if self.stderr == 0.0:
            return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        return diff / self.stderr

    def within(self, target: float, k: float = 3.0) -> bool:
        """True if ``|mean - target| <= k * stderr``."""
        return abs(self.mean - target) <= k * self.stderr

    def positive(self, k: float = 3.0) -> bool:
        """True if the mean exceeds zero by more than ``k`` standard errors."""
        return self.mean > k * self.stderr

    def as_row(self) -> tuple[float, float, int]:
        return (self.mean, self.stderr, self.n)

    def __sub__(self, other: "MonteCarloEstimate") -> "MonteCarloEstimate":
        # independent samples only; paired differences should be estimated directly
        return MonteCarloEstimate(
            self.mean - other.mean,
            math.hypot(self.stderr, other.stderr),
            min(self.n, other.n),
        )


def weighted_ecdf(values, weights, at):
    """Weighted empirical CDF of ``values`` evaluated at points ``at``.

    Weights are normalized to sum to one; zero-weight samples are ignored.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    if values.size == 0:
        raise ValidationError("weighted ECDF needs at least one positive weight")
    order = np.argsort(values, kind="stable")
    v = values[order]
    cw = np.cumsum(weights[order])
    cw /= cw[-1]
    idx = np.searchsorted(v, at, side="right")
    out = np.zeros(np.shape(at))
    nz = idx > 0
    out[nz] = cw[idx[nz] - 1]
    return out


def weighted_ks_distance(x1, w1, x2, w2) -> float:
    """Sup distance between two weighted empirical distribution functions."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if x1.shape != w1.shape or x2.shape != w2.shape:
        raise ValidationError("values and weights must have matching shapes")
    support = np.union1d(x1[w1 > 0], x2[w2 > 0])
    f1 = weighted_ecdf(x1, w1, support)
    f2 = weighted_ecdf(x2, w2, support)
    return float(np.max(np.abs(f1 - f2)))


@dataclass(frozen=True)
class KSResult:
    distance: float
    pvalue: float
    n_boot: int
    n1: int
    n2: int


def weighted_ks_bootstrap(x1, w1, x2, w2, n_boot: int = 1000, seed: int = 0) -> KSResult:
    """Weighted two-sample KS distance with a pooled-bootstrap p-value.

    Under the null both samples of (value, weight) pairs come from the same
    law, so bootstrap replicates draw both groups with replacement from the
    pooled pairs and recompute the weighted distance.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    w1 = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    d_obs = weighted_ks_distance(x1, w1, x2, w2)
    xs = np.concatenate([x1, x2])
    ws = np.concatenate([w1, w2])
    n1, n2 = x1.size, x2.size
    rng = np.random.default_rng(seed)
    exceed = 0
    done = 0
    while done < n_boot:
        i1 = rng.integers(0, xs.size, n1)
        i2 = rng.integers(0, xs.size, n2)
        if ws[i1].sum() <= 0 or ws[i2].sum() <= 0:
            continue
        d = weighted_ks_distance(xs[i1], ws[i1], xs[i2], ws[i2])
        exceed += d >= d_obs
        done += 1
    # add-one correction keeps the p-value strictly positive
    pvalue = (exceed + 1) / (n_boot + 1)
    return KSResult(d_obs, pvalue, n_boot, n1, n2)
