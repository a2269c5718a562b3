"""Finite-sample-valid prediction-powered sets built on betting intervals.

Each procedure forms a confidence interval R for the rectifier at level
``delta`` and an interval T for the imputed quantity at level
``alpha - delta``, then keeps the parameters for which 0 lies in the
Minkowski sum R + T. Validity needs only bounded data; no CLT is involved.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .betting import BettingConfig, wsr_mean_ci
from .ci_core import Interval
from .datasets import LabeledSet, UnlabeledSet
from .errors import DomainError
from .estimators import GridSet, GridSpec, quantile_grid

__all__ = [
    "BudgetSplit",
    "combine_minkowski",
    "pp_mean_na",
    "pp_quantile_na",
    "pp_logistic_na",
]


@dataclass(frozen=True)
class BudgetSplit:
    """Error budget: ``delta`` for the rectifier, ``alpha - delta`` for the imputed term.

    ``delta`` defaults to ``alpha / 2``.
    """

    alpha: float
    delta: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.delta is None:
            object.__setattr__(self, "delta", self.alpha / 2.0)
        if not 0.0 < self.delta < self.alpha:
            raise DomainError(f"delta must lie in (0, alpha={self.alpha}), got {self.delta}")

    @property
    def imputed(self) -> float:
        return self.alpha - self.delta


def _endpoints(family) -> np.ndarray:
    """Normalize a family of intervals to an (G, ..., 2) endpoint array."""
    if isinstance(family, Interval):
        return np.array([[family.lower, family.upper]])
    arr = np.asarray(
        [[iv.lower, iv.upper] if isinstance(iv, Interval) else iv for iv in family]
        if not isinstance(family, np.ndarray) else family,
        dtype=float,
    )
    if arr.shape[-1] != 2:
        raise DomainError(f"interval family must end in (lower, upper) pairs, got shape {arr.shape}")
    return arr


def combine_minkowski(rect, pred, grid: GridSpec, level: float) -> GridSet:
    """Retain theta iff 0 lies in R(theta) + T(theta) for every coordinate.

    Args:
        rect, pred: per-grid-point intervals, as sequences of :class:`Interval`
            or arrays of shape (G, 2) or (G, p, 2).
        grid: the grid both families are defined on.
        level: confidence level reported on the result.
    """
    R, T = _endpoints(rect), _endpoints(pred)
    if R.shape != T.shape or R.shape[0] != grid.size:
        raise DomainError(
            f"interval families have shapes {R.shape} and {T.shape}; grid has {grid.size} points"
        )
    lo = R[..., 0] + T[..., 0]
    hi = R[..., 1] + T[..., 1]
    ok = (lo <= 0.0) & (0.0 <= hi)
    mask = ok.reshape(grid.size, -1).all(axis=1)
    stat = np.stack([lo, hi], axis=-1).reshape(grid.size, -1)
    return GridSet(mask, grid, level, statistic=stat)


def _check_range(values, low, high, what):
    if values.min() < low or values.max() > high:
        raise DomainError(f"{what} must lie in [{low}, {high}]; observed [{values.min()}, {values.max()}]")


def pp_mean_na(labeled: LabeledSet, unlabeled: UnlabeledSet, split: BudgetSplit, bound: float,
               grid_resolution: int = 1000) -> Interval:
    """Nonasymptotic prediction-powered interval for E[Y] with Y, f in [0, B].

    Returns (f_l - R_u, f_u - R_l), where (f_l, f_u) is a betting interval for
    the mean prediction at level alpha - delta and (R_l, R_u) one for
    f(X) - Y at level delta.
    """
    B = float(bound)
    if not B > 0:
        raise DomainError(f"bound must be positive, got {bound}")
    _check_range(labeled.outcomes, 0.0, B, "labeled outcomes")
    _check_range(labeled.predictions, 0.0, B, "labeled predictions")
    _check_range(unlabeled.predictions, 0.0, B, "unlabeled predictions")
    t = wsr_mean_ci(unlabeled.predictions, BettingConfig(split.imputed, 0.0, B, grid_resolution))
    r = wsr_mean_ci(labeled.predictions - labeled.outcomes, BettingConfig(split.delta, -B, B, grid_resolution))
    return Interval(t.lower - r.upper, t.upper - r.lower, 1.0 - split.alpha, empty=t.empty or r.empty)


class _CachedCI:
    """Betting intervals memoized on the exact data sequence (indicator runs repeat across the grid)."""

    def __init__(self, config: BettingConfig):
        self.config = config
        self.cache = {}

    def __call__(self, z: np.ndarray) -> Interval:
        key = z.tobytes()
        hit = self.cache.get(key)
        if hit is None:
            hit = self.cache[key] = wsr_mean_ci(z, self.config)
        return hit


def pp_quantile_na(labeled, unlabeled, q: float, split: BudgetSplit,
                   grid: Optional[GridSpec] = None, grid_resolution: int = 1000) -> GridSet:
    """Nonasymptotic prediction-powered confidence set for the q-quantile.

    Keeps theta when q lies in [F_l(theta) + R_l(theta), F_u(theta) + R_u(theta)]
    (closed endpoints).
    """
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    grid = grid or quantile_grid(unlabeled)
    if grid.dim != 1:
        raise DomainError("quantile grid must be one-dimensional")
    rect_ci = _CachedCI(BettingConfig(split.delta, -1.0, 1.0, grid_resolution))
    pred_ci = _CachedCI(BettingConfig(split.imputed, 0.0, 1.0, grid_resolution))
    R = np.empty((grid.size, 2))
    T = np.empty((grid.size, 2))
    y, f, fu = labeled.outcomes, labeled.predictions, unlabeled.predictions
    for k, theta in enumerate(grid.points[:, 0]):
        r = rect_ci((y <= theta).astype(float) - (f <= theta))
        t = pred_ci((fu <= theta).astype(float))
        R[k] = r.lower, r.upper
        T[k] = t.lower - q, t.upper - q
    return combine_minkowski(R, T, grid, 1.0 - split.alpha)


def pp_logistic_na(labeled, unlabeled, split: BudgetSplit, grid: GridSpec, bounds,
                   grid_resolution: int = 1000) -> GridSet:
    """Nonasymptotic prediction-powered confidence set for logistic coefficients.

    Requires |X_j| <= B_j and outcomes, predictions in [0, 1]. Both the
    rectifier and the imputed-gradient intervals are split over the d
    coordinates (delta/d and (alpha - delta)/d).
    """
    Xl, Xu = labeled.require_features(), unlabeled.require_features()
    d = Xl.shape[1]
    if grid.dim != d:
        raise DomainError(f"grid has dimension {grid.dim}, model has {d} coefficients")
    B = np.broadcast_to(np.asarray(bounds, dtype=float), (d,))
    if np.any(B <= 0):
        raise DomainError("feature bounds must be positive")
    for j in range(d):
        _check_range(np.abs(Xl[:, j]), 0.0, B[j], f"|labeled feature {j}|")
        _check_range(np.abs(Xu[:, j]), 0.0, B[j], f"|unlabeled feature {j}|")
    for what, v in (("outcomes", labeled.outcomes), ("predictions", labeled.predictions),
                    ("unlabeled predictions", unlabeled.predictions)):
        _check_range(v, 0.0, 1.0, what)
    rect_terms = Xl * (labeled.predictions - labeled.outcomes)[:, None]
    R1 = np.empty((d, 2))
    for j in range(d):
        ci = wsr_mean_ci(rect_terms[:, j], BettingConfig(split.delta / d, -B[j], B[j], grid_resolution))
        R1[j] = ci.lower, ci.upper
    R = np.broadcast_to(R1, (grid.size, d, 2))
    T = np.empty((grid.size, d, 2))
    configs = [BettingConfig(split.imputed / d, -B[j], B[j], grid_resolution) for j in range(d)]
    fu = unlabeled.predictions
    for k, theta in enumerate(grid.points):
        g = Xu * (expit(Xu @ theta) - fu)[:, None]
        for j in range(d):
            ci = wsr_mean_ci(np.clip(g[:, j], -B[j], B[j]), configs[j])
            T[k, j] = ci.lower, ci.upper
    return combine_minkowski(R, T, grid, 1.0 - split.alpha)
