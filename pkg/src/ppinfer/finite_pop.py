"""Prediction-powered inference on a fixed finite population.

All N units have predictions (and features); outcomes are observed on a
uniformly drawn subset I of size n. The estimand is the risk minimizer over
the whole population, so the imputed term is computed exactly and only the
rectifier, a population mean, needs a confidence interval. That interval is
either the without-replacement CLT interval (``method="clt"``) or the
without-replacement betting interval (``method="wsr"``).

Gridded sets are closed under bracketing. A grid cell whose corners show
the membership statistic crossing the rectifier band (one corner above the
band, another below) is kept in full. When the rectifier is known exactly
(I = all units) the continuous set is a single point that no grid hits, and
bracketing keeps the neighbouring grid points instead of returning nothing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .betting import BettingConfig, wsr_finite_pop_ci
from .ci_core import Interval, normal_quantile
from .datasets import Schema, UnlabeledSet, column_values, feature_columns, read_table
from .errors import DataParseError, DomainError
from .estimators import (
    GradientSpec,
    GridSet,
    GridSpec,
    checked_pinv,
    logistic_gradient,
    pinball_gradient,
    quantile_grid,
)
from .riskmin import LossSpec, RiskMinResult, default_theta_grid

__all__ = [
    "FinitePopulation",
    "load_population",
    "fp_pp_mean",
    "fp_pp_quantile",
    "fp_pp_logistic",
    "fp_pp_convex",
    "fp_pp_ols",
    "fp_risk_min",
    "population_estimand",
]

METHODS = ("clt", "wsr")
# Absorbs rounding when an exactly known rectifier makes the retention rule an equality.
_RETAIN_TOL = 1e-12


@dataclass(frozen=True)
class FinitePopulation:
    """N predictions (optionally features) with outcomes on the labeled subset I.

    Labeled indices and outcomes are stored sorted by index.
    """

    predictions: np.ndarray
    labeled_indices: np.ndarray
    labeled_outcomes: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        f = np.array(self.predictions, dtype=float).ravel()
        idx = np.array(self.labeled_indices).ravel()
        y = np.array(self.labeled_outcomes, dtype=float).ravel()
        if f.size == 0:
            raise DomainError("population is empty")
        if idx.size == 0:
            raise DomainError("labeled subset is empty")
        if not np.issubdtype(idx.dtype, np.integer):
            if not np.all(idx == np.rint(idx)):
                raise DomainError("labeled indices must be integers")
            idx = idx.astype(int)
        if idx.min() < 0 or idx.max() >= f.size:
            raise DomainError(f"labeled indices must lie in 0..{f.size - 1}")
        if np.unique(idx).size != idx.size:
            raise DomainError("labeled indices must be unique")
        if y.size != idx.size:
            raise DomainError(f"{idx.size} labeled indices but {y.size} outcomes")
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(y))):
            raise DomainError("population contains NaN or infinite values")
        X = self.features
        if X is not None:
            X = np.array(X, dtype=float)
            if X.ndim == 1:
                X = X[:, None]
            if X.shape[0] != f.size or not np.all(np.isfinite(X)):
                raise DomainError(f"features must be a finite ({f.size}, d) matrix")
            X.flags.writeable = False
        # canonical order so that results depend on I only as a set
        order = np.argsort(idx, kind="stable")
        idx, y = idx[order], y[order]
        for a in (f, idx, y):
            a.flags.writeable = False
        object.__setattr__(self, "predictions", f)
        object.__setattr__(self, "labeled_indices", idx)
        object.__setattr__(self, "labeled_outcomes", y)
        object.__setattr__(self, "features", X)

    @property
    def N(self) -> int:
        return self.predictions.size

    @property
    def n(self) -> int:
        return self.labeled_indices.size

    @property
    def labeled_predictions(self) -> np.ndarray:
        return self.predictions[self.labeled_indices]

    @property
    def labeled_features(self) -> Optional[np.ndarray]:
        return None if self.features is None else self.features[self.labeled_indices]

    def require_features(self) -> np.ndarray:
        if self.features is None:
            raise DomainError("this estimand needs features but the population has none")
        return self.features

    def draw_order(self, seed: int) -> np.ndarray:
        """Seeded random permutation of the (index-sorted) labeled positions."""
        return np.random.default_rng(seed).permutation(self.n)


def load_population(path, manifest=None, schema: Optional[Schema] = None) -> FinitePopulation:
    """Load a population CSV.

    The outcome column may be blank on unlabeled rows. Without a manifest the
    labeled subset is every row with an outcome. A manifest is a CSV with an
    ``index`` column of 0-based row numbers; each listed row must have an
    outcome.
    """
    schema = schema or Schema()
    header, rows = read_table(path)
    f = column_values(path, header, rows, schema.prediction)
    y = column_values(path, header, rows, schema.outcome, allow_blank=True)
    cols = feature_columns(header, schema)
    X = np.column_stack([column_values(path, header, rows, c) for c in cols]) if cols else None
    if manifest is None:
        idx = np.flatnonzero(~np.isnan(y))
    else:
        mh, mrows = read_table(manifest)
        raw = column_values(manifest, mh, mrows, "index")
        if not np.all(raw == np.rint(raw)) or raw.min() < 0 or raw.max() >= len(rows):
            raise DataParseError(f"{manifest}: indices must be integers in 0..{len(rows) - 1}", column="index")
        idx = raw.astype(int)
        missing = idx[np.isnan(y[idx])]
        if missing.size:
            raise DataParseError(f"{path}: missing outcome for manifest row", row=int(missing[0]) + 1,
                                 column=schema.outcome)
    if idx.size == 0:
        raise DataParseError(f"{path}: no labeled rows", column=schema.outcome)
    return FinitePopulation(f, idx, y[idx], X)


# ---------------------------------------------------------------- rectifier intervals


def _check(alpha, method):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")


def _clt_bounds(Z: np.ndarray, N: int, alpha: float) -> np.ndarray:
    """Without-replacement CLT interval for each column of Z (n, k); returns (k, 2)."""
    n = Z.shape[0]
    if n < 2:
        raise DomainError("the CLT interval needs at least two labeled units")
    m = Z.mean(axis=0)
    var = ((Z - m) ** 2).mean(axis=0)
    half = normal_quantile(1.0 - alpha / 2.0) * np.sqrt(var / n) * np.sqrt((N - n) / N)
    return np.column_stack([m - half, m + half])


def _wsr_bounds(Z: np.ndarray, N: int, alpha: float, ranges) -> np.ndarray:
    """Betting without-replacement interval per column; Z rows must be in draw order."""
    out = np.empty((Z.shape[1], 2))
    cache = {}
    for k in range(Z.shape[1]):
        lo, hi = ranges[k]
        key = (Z[:, k].tobytes(), lo, hi)
        if key not in cache:
            ci = wsr_finite_pop_ci(Z[:, k], N, BettingConfig(alpha, lo, hi))
            cache[key] = (ci.lower, ci.upper)
        out[k] = cache[key]
    return out


def _rectifier_bounds(Z, N, alpha, method, ranges=None) -> np.ndarray:
    if method == "clt":
        return _clt_bounds(Z, N, alpha)
    if ranges is None:
        raise DomainError("method 'wsr' needs known bounds on the rectifier terms")
    return _wsr_bounds(Z, N, alpha, ranges)


# ---------------------------------------------------------------- bracketing


def _bracketed(below: np.ndarray, above: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Pointwise membership plus every corner of a cell the band crosses.

    Args:
        below, above: (G, p) flags, statistic under / over the band.
    """
    ok = ~(below | above).any(axis=1)
    if grid.explicit is not None:
        if grid.dim != 1:
            return ok
        order = np.argsort(grid.points[:, 0], kind="stable")
        b, a = below[order], above[order]
        cell = (((~b[:-1]) | (~b[1:])) & ((~a[:-1]) | (~a[1:]))).all(axis=1)
        extra = np.zeros(grid.size, dtype=bool)
        extra[:-1] |= cell
        extra[1:] |= cell
        out = ok.copy()
        out[order] |= extra
        return out
    shape = tuple(r for _, _, r in grid.axes)
    p = below.shape[1]
    nb = (~below).reshape(shape + (p,))
    na = (~above).reshape(shape + (p,))
    inner = tuple(slice(0, r - 1) for r in shape)
    corners = list(itertools.product((0, 1), repeat=len(shape)))

    def view(arr, c):
        return arr[tuple(slice(o, o + r - 1) for o, r in zip(c, shape))]

    any_nb = np.zeros(nb[inner].shape, dtype=bool)
    any_na = np.zeros_like(any_nb)
    for c in corners:
        any_nb |= view(nb, c)
        any_na |= view(na, c)
    cell = (any_nb & any_na).all(axis=-1)
    extra = np.zeros(shape, dtype=bool)
    for c in corners:
        extra[tuple(slice(o, o + r - 1) for o, r in zip(c, shape))] |= cell
    return ok | extra.ravel()


# ---------------------------------------------------------------- estimands


def fp_pp_mean(pop: FinitePopulation, alpha: float, method: str = "clt",
               bound: Optional[float] = None, seed: int = 0) -> Interval:
    """Interval for the population mean of Y: mean f - (R_u, R_l).

    Args:
        bound: B with f, Y in [0, B]; needed for ``wsr``.
        seed: draw order for ``wsr``.
    """
    _check(alpha, method)
    z = pop.labeled_predictions - pop.labeled_outcomes
    ranges = None
    if method == "wsr":
        if bound is None:
            raise DomainError("method 'wsr' needs bound B with predictions and outcomes in [0, B]")
        z = z[pop.draw_order(seed)]
        ranges = [(-bound, bound)]
    R = _rectifier_bounds(z[:, None], pop.N, alpha, method, ranges)[0]
    fbar = pop.predictions.mean()
    return Interval(float(fbar - R[1]), float(fbar - R[0]), 1.0 - alpha,
                    degenerate=bool(R[0] == R[1]))


def fp_pp_convex(pop: FinitePopulation, gradient: GradientSpec, alpha: float, grid: GridSpec,
                 method: str = "clt", bounds=None, seed: int = 0, bracket: bool = True) -> GridSet:
    """Keep theta when -mean_pop g_theta(x, f) lies in the rectifier band, every coordinate.

    The band for coordinate j is an interval for the population mean of
    g_theta(x, y) - g_theta(x, f) at level alpha/p.

    Args:
        bounds: per-coordinate B_j with rectifier terms in [-B_j, B_j];
            needed for ``wsr``.
    """
    _check(alpha, method)
    p = gradient.dim
    if grid.dim != p:
        raise DomainError(f"grid has dimension {grid.dim}, gradient has {p}")
    ranges = None
    if method == "wsr":
        if bounds is None:
            raise DomainError("method 'wsr' needs per-coordinate bounds on the rectifier terms")
        B = np.broadcast_to(np.asarray(bounds, dtype=float), (p,))
        ranges = [(-b, b) for b in B]
        order = pop.draw_order(seed)
    else:
        order = slice(None)
    X, Xl = pop.features, pop.labeled_features
    y, fl = pop.labeled_outcomes, pop.labeled_predictions
    G = grid.size
    stat = np.empty((G, p))
    R = np.empty((G, p, 2))
    budget = alpha / p
    for k, theta in enumerate(grid.points):
        stat[k] = -gradient(theta, X, pop.predictions).mean(axis=0)
        Z = (gradient(theta, Xl, y) - gradient(theta, Xl, fl))[order]
        R[k] = _rectifier_bounds(Z, pop.N, budget, method, ranges)
    # the same rounding guard as the risk rule: with I = [N] the band is a
    # point and stat equals it up to summation order
    tol = _RETAIN_TOL * (1.0 + np.abs(stat) + np.abs(R).max(axis=-1))
    below = stat < R[..., 0] - tol
    above = stat > R[..., 1] + tol
    mask = _bracketed(below, above, grid) if bracket else ~(below | above).any(axis=1)
    half = 0.5 * (R[..., 1] - R[..., 0])
    return GridSet(mask, grid, 1.0 - alpha, statistic=stat - 0.5 * (R[..., 0] + R[..., 1]),
                   half_width=half)


def fp_pp_quantile(pop: FinitePopulation, q: float, alpha: float, grid: Optional[GridSpec] = None,
                   method: str = "clt", seed: int = 0) -> GridSet:
    """Keep theta when the population CDF of f at theta lies in (q - R_u, q - R_l)."""
    grad = pinball_gradient(q)
    grid = grid or quantile_grid(UnlabeledSet(pop.predictions))
    return fp_pp_convex(pop, grad, alpha, grid, method, bounds=1.0, seed=seed)


def fp_pp_logistic(pop: FinitePopulation, alpha: float, grid: GridSpec, method: str = "clt",
                   seed: int = 0) -> GridSet:
    """Logistic coefficients; rectifier x_j (f - y) with budget alpha/d per coordinate.

    For ``wsr`` the bound B_j = max |x_ij| over the population is known
    exactly, and outcomes and predictions must lie in [0, 1].
    """
    X = pop.require_features()
    bounds = None
    if method == "wsr":
        for what, v in (("outcomes", pop.labeled_outcomes), ("predictions", pop.predictions)):
            if v.min() < 0.0 or v.max() > 1.0:
                raise DomainError(f"{what} must lie in [0, 1] for the betting interval")
        bounds = np.abs(X).max(axis=0)
        bounds = np.where(bounds > 0, bounds, 1.0)
    return fp_pp_convex(pop, logistic_gradient(X.shape[1]), alpha, grid, method, bounds, seed)


def fp_pp_ols(pop: FinitePopulation, alpha: float, method: str = "clt",
              bound: Optional[float] = None, seed: int = 0) -> list:
    """Per-coordinate intervals (X^+ f - R_u, X^+ f - R_l), simultaneous at level 1 - alpha.

    The rectifier X^+ (f - y) is the population mean of
    z_i = N X^+[:, i] (f_i - y_i), which is computable on labeled units
    because the population design is fully observed. Each coordinate gets
    budget alpha/d.

    Args:
        bound: B with |f - y| <= B; needed for ``wsr``.
    """
    _check(alpha, method)
    X = pop.require_features()
    N, d = X.shape
    pinv = checked_pinv(X, "population design")
    theta_f = pinv @ pop.predictions
    A = N * pinv[:, pop.labeled_indices]  # (d, n)
    Z = (A * (pop.labeled_predictions - pop.labeled_outcomes)[None, :]).T
    ranges = None
    if method == "wsr":
        if bound is None:
            raise DomainError("method 'wsr' needs bound B with |f - y| <= B")
        scale = N * np.abs(pinv).max(axis=1) * bound
        ranges = [(-s, s) for s in scale]
        Z = Z[pop.draw_order(seed)]
    R = _rectifier_bounds(Z, N, alpha / d, method, ranges)
    level = 1.0 - alpha
    return [Interval(float(theta_f[j] - R[j, 1]), float(theta_f[j] - R[j, 0]), level,
                     degenerate=bool(R[j, 0] == R[j, 1])) for j in range(d)]


def fp_risk_min(pop: FinitePopulation, loss: LossSpec, alpha: float, method: str = "clt",
                seed: int = 0) -> RiskMinResult:
    """Keep theta when L(theta) <= L(theta~) - R_l(theta) + R_u(theta~).

    L is the imputed risk over the whole population and theta~ its minimizer
    (lowest index on ties); no data splitting is needed. (R_l, R_u) is a
    two-sided interval at error alpha for the population mean loss gap.
    """
    _check(alpha, method)
    thetas = loss.thetas if loss.thetas is not None else default_theta_grid(
        UnlabeledSet(pop.predictions), loss.margin)
    L = loss.losses(thetas, pop.features, pop.predictions).mean(axis=1)
    tilde = int(np.argmin(L))
    Xl = pop.labeled_features
    gaps = loss.losses(thetas, Xl, pop.labeled_outcomes) - loss.losses(thetas, Xl, pop.labeled_predictions)
    B = loss.bound
    if method == "wsr":
        gaps = gaps[:, pop.draw_order(seed)]
    R = _rectifier_bounds(gaps.T, pop.N, alpha, method, [(-B, B)] * gaps.shape[0])
    mask = L <= L[tilde] - R[:, 0] + R[tilde, 1] + _RETAIN_TOL * B
    gs = GridSet(mask, GridSpec.from_points(thetas), 1.0 - alpha, statistic=L)
    return RiskMinResult(gs, tilde, L, R, 0.0, seed if method == "wsr" else None)


def population_estimand(outcomes, kind: str, features=None, q: Optional[float] = None):
    """Exact population target when every outcome is known (test and harness oracle).

    Supports ``mean``, ``quantile`` (smallest y with empirical CDF >= q) and
    ``ols``. Logistic targets need an iterative solver; see
    :func:`ppinfer.estimators.pp_point_estimate`.
    """
    y = np.asarray(outcomes, dtype=float)
    if kind == "mean":
        return float(y.mean())
    if kind == "quantile":
        ys = np.sort(y)
        k = int(np.ceil(q * y.size - 1e-12)) - 1
        return float(ys[max(k, 0)])
    if kind == "ols":
        return checked_pinv(np.asarray(features, dtype=float), "population design") @ y
    raise DomainError(f"no closed-form population estimand for {kind!r}")
