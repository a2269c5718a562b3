"""Asymptotic prediction-powered estimators.

Every estimator combines an imputed quantity computed on the unlabeled
predictions with a rectifier (the average prediction error of that quantity,
estimated on the labeled sample). Means and linear-regression coefficients
have closed-form intervals; quantiles, GLM coefficients and general convex
targets return the set of grid points that pass a per-coordinate normal test

    |g_hat^f(theta)_j + Delta_hat(theta)_j| <= z_{1 - alpha/(2p)} * sqrt(var_Delta_j/n + var_g_j/N).

All variances use divisor n (resp. N).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .ci_core import Interval, normal_quantile
from .datasets import LabeledSet, UnlabeledSet
from .errors import ConvergenceError, DomainError, NumericalError

__all__ = [
    "GridSpec",
    "GridSet",
    "EmptySetWarning",
    "RectifierEstimate",
    "GradientSpec",
    "squared_gradient",
    "pinball_gradient",
    "logistic_gradient",
    "poisson_gradient",
    "ols_gradient",
    "rectifier_estimate",
    "pp_mean",
    "pp_quantile",
    "pp_logistic",
    "pp_poisson",
    "pp_glm",
    "pp_ols",
    "ols_components",
    "pp_convex",
    "pp_point_estimate",
    "default_grid",
    "profile_sets",
    "checked_pinv",
]

# Lattice points per axis for default grids by dimension. Exhaustive lattices
# beyond d = 3 are replaced by profile sets.
DEFAULT_RESOLUTION = {1: 200, 2: 60, 3: 20}
DEFAULT_EXTENT_SE = 6.0
QUANTILE_RESOLUTION = 1000
# Entries of an N x G working matrix evaluated at once for GLM grids.
_CHUNK_CELLS = 1 << 22


class EmptySetWarning(UserWarning):
    """A confidence set retained no grid point."""


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """A rectangular lattice of candidate parameters, or an explicit point list.

    Args:
        axes: per-coordinate ``(low, high, resolution)``.
        explicit: optional (G, p) array of points used instead of the lattice.
    """

    axes: tuple = ()
    explicit: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.explicit is not None:
            pts = np.array(self.explicit, dtype=float)
            if pts.ndim == 1:
                pts = pts[:, None]
            if pts.ndim != 2 or pts.shape[0] == 0:
                raise DomainError("explicit grid must be a nonempty list of points")
            if not np.all(np.isfinite(pts)):
                raise DomainError("grid points must be finite")
            pts.flags.writeable = False
            object.__setattr__(self, "explicit", pts)
            return
        if not self.axes:
            raise DomainError("grid needs at least one axis")
        axes = []
        for ax in self.axes:
            low, high, res = ax
            if not (math.isfinite(low) and math.isfinite(high)) or not low < high:
                raise DomainError(f"grid axis needs finite low < high, got ({low}, {high})")
            if int(res) < 2:
                raise DomainError(f"grid resolution must be at least 2, got {res}")
            axes.append((float(low), float(high), int(res)))
        object.__setattr__(self, "axes", tuple(axes))

    @classmethod
    def linspace(cls, low, high, resolution) -> "GridSpec":
        return cls(axes=((low, high, resolution),))

    @classmethod
    def from_points(cls, points) -> "GridSpec":
        return cls(explicit=np.asarray(points, dtype=float))

    @property
    def dim(self) -> int:
        return self.explicit.shape[1] if self.explicit is not None else len(self.axes)

    @cached_property
    def points(self) -> np.ndarray:
        """(G, p) array of grid points; lattices are enumerated in C order."""
        if self.explicit is not None:
            return self.explicit
        ticks = [np.linspace(lo, hi, r) for lo, hi, r in self.axes]
        mesh = np.meshgrid(*ticks, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        pts.flags.writeable = False
        return pts

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def cell(self) -> np.ndarray:
        """Per-coordinate spacing (largest gap for explicit grids)."""
        if self.explicit is not None:
            gaps = [np.diff(np.unique(c)) for c in self.explicit.T]
            return np.array([g.max() if g.size else 0.0 for g in gaps])
        return np.array([(hi - lo) / (r - 1) for lo, hi, r in self.axes])


@dataclass(frozen=True)
class GridSet:
    """Grid points retained by a set-valued procedure.

    Attributes:
        mask: boolean membership per grid point.
        grid: the evaluated grid.
        level: confidence level 1 - alpha.
        statistic: (G, p) test statistic per point, when the procedure has one.
        half_width: (G, p) acceptance half-width per point, when applicable.
        profile: True for a profile set (other coordinates pinned at a point
            estimate); such sets are a practical device, not a joint guarantee.
    """

    mask: np.ndarray
    grid: GridSpec
    level: float
    statistic: Optional[np.ndarray] = None
    half_width: Optional[np.ndarray] = None
    profile: bool = False

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.grid.size,):
            raise DomainError(f"mask has shape {mask.shape}, grid has {self.grid.size} points")
        object.__setattr__(self, "mask", mask)
        if not mask.any():
            warnings.warn("confidence set is empty", EmptySetWarning, stacklevel=3)

    @property
    def retained(self) -> np.ndarray:
        return self.grid.points[self.mask]

    @property
    def empty(self) -> bool:
        return not self.mask.any()

    def hull(self):
        """Per-coordinate (low, high) arrays of the retained points, or None if empty."""
        if self.empty:
            return None
        r = self.retained
        return r.min(axis=0), r.max(axis=0)

    def interval(self, coord: int = 0) -> Interval:
        """Hull along one coordinate; an empty set yields the grid extent flagged empty."""
        pts = self.grid.points[:, coord]
        if self.empty:
            return Interval(float(pts.min()), float(pts.max()), self.level, empty=True)
        r = self.retained[:, coord]
        return Interval(float(r.min()), float(r.max()), self.level)

    def contains(self, theta, tol: float = 0.0) -> bool:
        """True if a retained grid point lies within ``tol`` (sup-norm) of ``theta``."""
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if self.empty:
            return False
        return bool(np.any(np.max(np.abs(self.retained - theta), axis=1) <= tol))

    def covers(self, theta) -> bool:
        """True if ``theta`` lies in the retained hull widened by one grid cell."""
        h = self.hull()
        if h is None:
            return False
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        c = self.grid.cell
        return bool(np.all(h[0] - c <= theta) and np.all(theta <= h[1] + c))


@dataclass(frozen=True)
class RectifierEstimate:
    """Empirical rectifier and its per-coordinate variance (divisor n)."""

    value: np.ndarray
    variance: np.ndarray
    n: int


# ---------------------------------------------------------------- gradients


@dataclass(frozen=True)
class GradientSpec:
    """A (sub)gradient g_theta(x, y) of a convex loss.

    Args:
        evaluate: ``(theta, X, y) -> (n, p)`` array; ``X`` may be None for
            featureless losses.
        dim: parameter dimension p.
        name: label for reports.
        kind: solver family for :func:`pp_point_estimate` (``squared``,
            ``ols``, ``logistic``, ``poisson``, ``pinball`` or ``custom``).
        loss: optional ``(theta, X, y) -> (n,)`` loss values, used by the
            one-dimensional golden-section solver.
        q: quantile level for the pinball family.
    """

    evaluate: Callable
    dim: int
    name: str = "custom"
    kind: str = "custom"
    loss: Optional[Callable] = None
    q: Optional[float] = None

    def __call__(self, theta, X, y) -> np.ndarray:
        g = np.asarray(self.evaluate(np.asarray(theta, dtype=float), X, y), dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        if g.shape != (np.shape(y)[0], self.dim):
            raise DomainError(
                f"gradient {self.name!r} returned shape {g.shape}, expected {(np.shape(y)[0], self.dim)}"
            )
        return g


def squared_gradient() -> GradientSpec:
    """g_theta(y) = theta - y; the target is the mean."""
    return GradientSpec(
        evaluate=lambda t, X, y: (t[0] - y)[:, None],
        dim=1,
        name="squared",
        kind="squared",
        loss=lambda t, X, y: 0.5 * (y - t[0]) ** 2,
    )


def pinball_gradient(q: float) -> GradientSpec:
    """g_theta(y) = -q + 1{y <= theta}; the target is the q-quantile."""
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")

    def loss(t, X, y):
        r = y - t[0]
        return np.where(r > 0, q * r, (q - 1.0) * r)

    return GradientSpec(
        evaluate=lambda t, X, y: (-q + (y <= t[0]))[:, None],
        dim=1,
        name=f"pinball(q={q:g})",
        kind="pinball",
        loss=loss,
        q=q,
    )


def _glm_gradient(mean_fn, d, kind):
    def evaluate(t, X, y):
        return X * (mean_fn(X @ t) - y)[:, None]

    return GradientSpec(evaluate=evaluate, dim=d, name=kind, kind=kind)


def logistic_gradient(d: int) -> GradientSpec:
    """g_theta(x, y) = x (mu_theta(x) - y) with mu the logistic function."""
    return _glm_gradient(expit, d, "logistic")


def poisson_gradient(d: int) -> GradientSpec:
    """g_theta(x, y) = x (exp(x'theta) - y)."""
    return _glm_gradient(np.exp, d, "poisson")


def ols_gradient(d: int) -> GradientSpec:
    """g_theta(x, y) = x (x'theta - y)."""
    return GradientSpec(
        evaluate=lambda t, X, y: X * (X @ t - y)[:, None], dim=d, name="ols", kind="ols"
    )


# ---------------------------------------------------------------- helpers


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def _mean_var(a: np.ndarray, axis=0):
    m = a.mean(axis=axis)
    v = ((a - np.expand_dims(m, axis)) ** 2).mean(axis=axis)
    return m, v


def _bonferroni_z(alpha, p):
    return normal_quantile(1.0 - alpha / (2.0 * p))


def rectifier_estimate(labeled: LabeledSet, gradient: GradientSpec, theta, weights=None):
    """Delta_hat(theta) = mean of w(X) (g(X, Y) - g(X, f(X))) with its variance."""
    X = labeled.features
    r = gradient(theta, X, labeled.outcomes) - gradient(theta, X, labeled.predictions)
    if weights is not None:
        r = r * weights[:, None]
    value, var = _mean_var(r)
    return RectifierEstimate(value, var, labeled.n)


def _convex_statistics(labeled, unlabeled, gradient, points, w_lab=None, w_unl=None):
    """Per grid point: imputed gradient, its variance, rectifier and its variance."""
    G, p = points.shape
    g_hat = np.empty((G, p))
    var_g = np.empty((G, p))
    delta = np.empty((G, p))
    var_d = np.empty((G, p))
    Xu = unlabeled.features
    for k in range(G):
        theta = points[k]
        imp = gradient(theta, Xu, unlabeled.predictions)
        if w_unl is not None:
            imp = imp * w_unl[:, None]
        g_hat[k], var_g[k] = _mean_var(imp)
        rect = rectifier_estimate(labeled, gradient, theta, w_lab)
        delta[k], var_d[k] = rect.value, rect.variance
    return g_hat, var_g, delta, var_d


def _membership(g_hat, var_g, delta, var_d, n, N, alpha, grid, profile=False):
    p = g_hat.shape[1]
    stat = g_hat + delta
    half = _bonferroni_z(alpha, p) * np.sqrt(var_d / n + var_g / N)
    mask = np.all(np.abs(stat) <= half, axis=1)
    return GridSet(mask, grid, 1.0 - alpha, stat, half, profile)


# ---------------------------------------------------------------- mean


def pp_mean(labeled: LabeledSet, unlabeled: UnlabeledSet, alpha: float) -> Interval:
    """Prediction-powered interval for E[Y].

    Estimate: mean(f(X~)) - mean(f(X) - Y). Half-width:
    z_{1-alpha/2} sqrt(var(f - Y)/n + var(f(X~))/N).
    """
    _check_alpha(alpha)
    theta_f, var_f = _mean_var(unlabeled.predictions)
    delta, var_r = _mean_var(labeled.predictions - labeled.outcomes)
    est = theta_f - delta
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(var_r / labeled.n + var_f / unlabeled.N)
    return Interval(
        float(est - half), float(est + half), 1.0 - alpha,
        degenerate=bool(var_r == 0.0 and var_f == 0.0),
    )


def pp_mean_se(labeled: LabeledSet, unlabeled: UnlabeledSet):
    """(estimate, standard error) behind :func:`pp_mean`."""
    theta_f, var_f = _mean_var(unlabeled.predictions)
    delta, var_r = _mean_var(labeled.predictions - labeled.outcomes)
    return float(theta_f - delta), math.sqrt(var_r / labeled.n + var_f / unlabeled.N)


# ---------------------------------------------------------------- quantile


def quantile_grid(unlabeled: UnlabeledSet, resolution: int = QUANTILE_RESOLUTION) -> GridSpec:
    """Uniform grid from the smallest to the largest unlabeled prediction."""
    lo, hi = float(unlabeled.predictions.min()), float(unlabeled.predictions.max())
    if lo == hi:
        return GridSpec.from_points([lo])
    return GridSpec.linspace(lo, hi, resolution)


def pp_quantile(labeled, unlabeled, q: float, alpha: float, grid: Optional[GridSpec] = None) -> GridSet:
    """Prediction-powered confidence set for the q-quantile of Y.

    Counts are taken with ``<=`` exactly; no smoothing at point masses.
    """
    _check_alpha(alpha)
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    grid = grid or quantile_grid(unlabeled)
    if grid.dim != 1:
        raise DomainError("quantile grid must be one-dimensional")
    theta = grid.points[:, 0]
    n, N = labeled.n, unlabeled.N
    y, f = labeled.outcomes, labeled.predictions
    below_y = np.searchsorted(np.sort(y), theta, side="right")
    below_f = np.searchsorted(np.sort(f), theta, side="right")
    below_both = np.searchsorted(np.sort(np.maximum(y, f)), theta, side="right")
    delta = (below_y - below_f) / n
    # indicators differ on exactly below_y + below_f - 2 * below_both points
    var_d = (below_y + below_f - 2 * below_both) / n - delta**2
    F = np.searchsorted(np.sort(unlabeled.predictions), theta, side="right") / N
    var_g = F * (1.0 - F)
    stat = (F + delta - q)[:, None]
    half = (normal_quantile(1.0 - alpha / 2.0) * np.sqrt(np.maximum(var_d, 0.0) / n + var_g / N))[:, None]
    mask = np.abs(stat[:, 0]) <= half[:, 0]
    return GridSet(mask, grid, 1.0 - alpha, stat, half)


# ---------------------------------------------------------------- GLMs


_MEAN_FNS = {"logistic": expit, "poisson": np.exp}


def _glm_check(labeled, unlabeled, family):
    Xl = labeled.require_features()
    Xu = unlabeled.require_features()
    if Xl.shape[1] != Xu.shape[1]:
        raise DomainError(f"labeled has {Xl.shape[1]} features, unlabeled has {Xu.shape[1]}")
    if family == "logistic":
        for name, v in (("outcomes", labeled.outcomes), ("predictions", labeled.predictions),
                        ("unlabeled predictions", unlabeled.predictions)):
            if v.min() < 0.0 or v.max() > 1.0:
                raise DomainError(f"logistic regression needs {name} in [0, 1]")
    elif family == "poisson":
        for name, v in (("outcomes", labeled.outcomes), ("predictions", labeled.predictions),
                        ("unlabeled predictions", unlabeled.predictions)):
            if v.min() < 0.0:
                raise DomainError(f"Poisson regression needs nonnegative {name}")
    return Xl, Xu


def _glm_imputed(Xu, fu, points, mean_fn):
    """Imputed gradient mean and variance at each grid point, chunked over the grid."""
    N, d = Xu.shape
    G = points.shape[0]
    g_hat = np.empty((G, d))
    var_g = np.empty((G, d))
    X2 = Xu * Xu
    chunk = max(1, _CHUNK_CELLS // N)
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(0, G, chunk):
            T = points[s:s + chunk]
            resid = mean_fn(Xu @ T.T) - fu[:, None]  # N x chunk
            m = (Xu.T @ resid) / N
            sq = (X2.T @ (resid * resid)) / N
            g_hat[s:s + chunk] = m.T
            var_g[s:s + chunk] = np.maximum(sq - m * m, 0.0).T
    return g_hat, var_g


def pp_glm(labeled, unlabeled, alpha, grid, family: str, profile=False) -> GridSet:
    _check_alpha(alpha)
    Xl, Xu = _glm_check(labeled, unlabeled, family)
    d = Xl.shape[1]
    if grid.dim != d:
        raise DomainError(f"grid has dimension {grid.dim}, model has {d} coefficients")
    rect = Xl * (labeled.predictions - labeled.outcomes)[:, None]
    delta, var_d = _mean_var(rect)
    g_hat, var_g = _glm_imputed(Xu, unlabeled.predictions, grid.points, _MEAN_FNS[family])
    G = grid.size
    stat = g_hat + delta
    half = _bonferroni_z(alpha, d) * np.sqrt(var_d / labeled.n + var_g / unlabeled.N)
    with np.errstate(invalid="ignore"):
        mask = np.all(np.abs(stat) <= half, axis=1)
    mask &= np.all(np.isfinite(stat), axis=1)
    return GridSet(mask, grid, 1.0 - alpha, stat, np.broadcast_to(half, (G, d)), profile)


def pp_logistic(labeled, unlabeled, alpha: float, grid: Optional[GridSpec] = None) -> GridSet:
    """Prediction-powered confidence set for logistic-regression coefficients.

    Outcomes and predictions must lie in [0, 1]. With ``grid=None`` a lattice
    is centred at the rectified point estimate (d <= 3 only).
    """
    grid = grid or default_grid(labeled, unlabeled, logistic_gradient(labeled.d), alpha)
    return pp_glm(labeled, unlabeled, alpha, grid, "logistic")


def pp_poisson(labeled, unlabeled, alpha: float, grid: Optional[GridSpec] = None) -> GridSet:
    """Prediction-powered confidence set for Poisson-regression coefficients."""
    grid = grid or default_grid(labeled, unlabeled, poisson_gradient(labeled.d), alpha)
    return pp_glm(labeled, unlabeled, alpha, grid, "poisson")


# ---------------------------------------------------------------- OLS


def checked_pinv(X: np.ndarray, name: str) -> np.ndarray:
    """Moore-Penrose pseudoinverse that refuses rank-deficient input.

    Rank is judged against max(n, d) * eps * largest singular value.
    """
    n, d = X.shape
    if n < d:
        raise NumericalError(f"{name} has {n} rows but {d} columns; X'X is singular")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    tol = max(n, d) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if s.size == 0 or s[-1] <= tol:
        raise NumericalError(f"{name} is rank deficient (X'X singular)")
    return (Vt.T / s) @ U.T


def _sandwich(X, resid, pinv):
    """Sigma^{-1} M Sigma^{-1} with Sigma = X'X/n, M = mean(resid^2 x x')."""
    n = X.shape[0]
    sigma_inv = n * (pinv @ pinv.T)
    M = (X * (resid**2)[:, None]).T @ X / n
    return sigma_inv @ M @ sigma_inv


def ols_components(labeled: LabeledSet, unlabeled: UnlabeledSet):
    """Rectified OLS estimate and its two sandwich covariance pieces.

    Returns:
        (theta_pp, V, V_tilde): estimate, rectifier sandwich (scale 1/n) and
        imputed sandwich (scale 1/N).
    """
    Xl, Xu = labeled.require_features(), unlabeled.require_features()
    if Xl.shape[1] != Xu.shape[1]:
        raise DomainError(f"labeled has {Xl.shape[1]} features, unlabeled has {Xu.shape[1]}")
    pl = checked_pinv(Xl, "labeled design X")
    pu = checked_pinv(Xu, "unlabeled design X~")
    fu = unlabeled.predictions
    err = labeled.predictions - labeled.outcomes
    theta_f = pu @ fu
    delta = pl @ err
    V_tilde = _sandwich(Xu, fu - Xu @ theta_f, pu)
    V = _sandwich(Xl, err - Xl @ delta, pl)
    return theta_f - delta, V, V_tilde


def pp_ols(labeled, unlabeled, j_star: int, alpha: float) -> Interval:
    """Prediction-powered interval for coordinate ``j_star`` of the OLS coefficient."""
    _check_alpha(alpha)
    d = labeled.require_features().shape[1]
    if not 0 <= j_star < d:
        raise DomainError(f"coordinate {j_star} out of range for {d} features")
    theta, V, Vt = ols_components(labeled, unlabeled)
    var = V[j_star, j_star] / labeled.n + Vt[j_star, j_star] / unlabeled.N
    half = normal_quantile(1.0 - alpha / 2.0) * math.sqrt(max(var, 0.0))
    c = float(theta[j_star])
    return Interval(c - half, c + half, 1.0 - alpha, degenerate=bool(var <= 0.0))


# ---------------------------------------------------------------- convex


def _check_convex_inputs(labeled, unlabeled, gradient, grid):
    if grid.dim != gradient.dim:
        raise DomainError(f"grid has dimension {grid.dim}, gradient {gradient.name!r} has {gradient.dim}")


def pp_convex(labeled, unlabeled, gradient: GradientSpec, alpha: float,
              grid: Optional[GridSpec] = None) -> GridSet:
    """Prediction-powered confidence set for a convex risk minimizer.

    alpha is split evenly over the p gradient coordinates (Bonferroni).
    """
    return _convex_set(labeled, unlabeled, gradient, alpha, grid)


def _convex_set(labeled, unlabeled, gradient, alpha, grid=None, w_lab=None, w_unl=None):
    _check_alpha(alpha)
    grid = grid or default_grid(labeled, unlabeled, gradient, alpha)
    _check_convex_inputs(labeled, unlabeled, gradient, grid)
    stats = _convex_statistics(labeled, unlabeled, gradient, grid.points, w_lab, w_unl)
    return _membership(*stats, labeled.n, unlabeled.N, alpha, grid)


# ---------------------------------------------------------------- point estimates


_NEWTON_MAX_ITER = 100
_GRAD_TOL = 1e-8
_STEP_TOL = 1e-6
_GOLDEN_TOL = 1e-10


def _glm_point(labeled, unlabeled, family):
    Xl, Xu = _glm_check(labeled, unlabeled, family)
    N, d = Xu.shape
    fu = unlabeled.predictions
    delta = (Xl * (labeled.predictions - labeled.outcomes)[:, None]).mean(axis=0)
    # log-partition A(eta): the loss is A(x'theta) - y x'theta
    if family == "logistic":
        A, dA, d2A = (lambda e: np.logaddexp(0.0, e)), expit, (lambda e: expit(e) * expit(-e))
    else:
        A, dA, d2A = np.exp, np.exp, np.exp

    def objective(t):
        # imputed loss plus the linear rectifier term delta't
        with np.errstate(over="ignore"):
            eta = Xu @ t
            return float(np.mean(A(eta) - fu * eta) + delta @ t)

    def grad(t):
        with np.errstate(over="ignore"):
            return Xu.T @ (dA(Xu @ t) - fu) / N + delta

    theta = np.zeros(d)
    value = objective(theta)
    g = grad(theta)
    for _ in range(_NEWTON_MAX_ITER):
        with np.errstate(over="ignore"):
            H = (Xu * d2A(Xu @ theta)[:, None]).T @ Xu / N
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        while t > 1e-12:
            cand = theta - t * step
            cv = objective(cand)
            if np.isfinite(cv) and cv <= value + 1e-4 * t * float(g @ -step):
                break
            t *= 0.5
        else:
            break
        theta, value = cand, cv
        g = grad(theta)
        # a small gradient alone is not enough: under separation the gradient
        # decays while Newton keeps taking unit-size steps toward infinity
        small_step = np.max(np.abs(t * step)) <= _STEP_TOL * (1.0 + np.max(np.abs(theta)))
        if np.max(np.abs(g)) <= _GRAD_TOL and small_step:
            return theta
    raise ConvergenceError(
        f"{family} rectified-loss minimization did not converge in {_NEWTON_MAX_ITER} Newton steps",
        float(np.max(np.abs(g))), theta,
    )


def _golden(fn, lo, hi, tol=_GOLDEN_TOL):
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv * (b - a), a + inv * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def rectified_loss(labeled, unlabeled, gradient: GradientSpec):
    """theta -> L^PP(theta) = imputed loss + (labeled loss - labeled imputed loss)."""
    if gradient.loss is None:
        raise DomainError(f"gradient {gradient.name!r} carries no loss for the point estimate")
    Xl, Xu = labeled.features, unlabeled.features

    def L(theta):
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        return float(
            np.mean(gradient.loss(t, Xu, unlabeled.predictions))
            + np.mean(gradient.loss(t, Xl, labeled.outcomes) - gradient.loss(t, Xl, labeled.predictions))
        )

    return L


def pp_point_estimate(labeled, unlabeled, gradient: GradientSpec, bracket=None) -> np.ndarray:
    """Minimizer of the rectified loss L^PP.

    Closed form for the mean and OLS, damped Newton for logistic/Poisson,
    golden-section search for other one-dimensional losses (``bracket``
    defaults to the range of all outcomes and predictions).

    Raises:
        ConvergenceError: Newton did not reach gradient norm 1e-8 with a
            vanishing step within 100 iterations (e.g. separable data).
    """
    if gradient.kind == "squared":
        est, _ = pp_mean_se(labeled, unlabeled)
        return np.array([est])
    if gradient.kind == "ols":
        return ols_components(labeled, unlabeled)[0]
    if gradient.kind in _MEAN_FNS:
        return _glm_point(labeled, unlabeled, gradient.kind)
    if gradient.dim != 1:
        raise DomainError(f"no registered solver for {gradient.dim}-dimensional loss {gradient.name!r}")
    L = rectified_loss(labeled, unlabeled, gradient)
    if bracket is None:
        vals = np.concatenate([labeled.outcomes, labeled.predictions, unlabeled.predictions])
        bracket = (float(vals.min()), float(vals.max()))
    lo, hi = bracket
    if lo == hi:
        return np.array([lo])
    return np.array([_golden(L, lo, hi)])


# ---------------------------------------------------------------- default grids


def _linearized_se(labeled, unlabeled, gradient, theta):
    """Per-coordinate standard errors from H^{-1} (Var_Delta/n + Var_g/N) H^{-1}."""
    Xl, Xu = labeled.features, unlabeled.features
    rect = gradient(theta, Xl, labeled.outcomes) - gradient(theta, Xl, labeled.predictions)
    imp = gradient(theta, Xu, unlabeled.predictions)
    cov = np.atleast_2d(np.cov(rect.T, bias=True)) / labeled.n + np.atleast_2d(np.cov(imp.T, bias=True)) / unlabeled.N
    if gradient.kind in _MEAN_FNS:
        eta = Xu @ theta
        w = expit(eta) * expit(-eta) if gradient.kind == "logistic" else np.exp(eta)
        H = (Xu * w[:, None]).T @ Xu / unlabeled.N
    elif gradient.kind == "ols":
        H = Xu.T @ Xu / unlabeled.N
    else:
        H = np.eye(gradient.dim)
    Hinv = np.linalg.pinv(H)
    return np.sqrt(np.maximum(np.diag(Hinv @ cov @ Hinv.T), 0.0))


def default_grid(labeled, unlabeled, gradient: GradientSpec, alpha: float, resolution=None) -> GridSpec:
    """Lattice centred at the rectified point estimate, +/- 6 standard errors per axis.

    Pinball losses use the quantile grid (range of unlabeled predictions)
    instead. Dimension above 3 raises; use :func:`profile_sets`.
    """
    if gradient.kind == "pinball":
        return quantile_grid(unlabeled)
    p = gradient.dim
    if p > 3:
        raise DomainError(f"no default lattice for {p} coordinates; use profile_sets")
    theta = pp_point_estimate(labeled, unlabeled, gradient)
    if gradient.kind == "squared":
        se = np.array([pp_mean_se(labeled, unlabeled)[1]])
    else:
        se = _linearized_se(labeled, unlabeled, gradient, theta)
    res = resolution or DEFAULT_RESOLUTION[p]
    axes = []
    for t, s in zip(theta, se):
        ext = DEFAULT_EXTENT_SE * s if s > 0 else 1e-6 * max(1.0, abs(t))
        axes.append((t - ext, t + ext, res))
    return GridSpec(axes=tuple(axes))


def profile_sets(labeled, unlabeled, gradient: GradientSpec, alpha: float, resolution: int = 200):
    """One profile set per coordinate, other coordinates pinned at the point estimate.

    Each set varies a single coordinate over +/- 6 standard errors and applies
    the full Bonferroni membership test. These are a practical device for
    d > 3; they do not carry a joint coverage guarantee.
    """
    theta = pp_point_estimate(labeled, unlabeled, gradient)
    se = _linearized_se(labeled, unlabeled, gradient, theta)
    out = []
    for j in range(gradient.dim):
        ext = DEFAULT_EXTENT_SE * se[j] if se[j] > 0 else 1e-6 * max(1.0, abs(theta[j]))
        pts = np.tile(theta, (resolution, 1))
        pts[:, j] = np.linspace(theta[j] - ext, theta[j] + ext, resolution)
        grid = GridSpec.from_points(pts)
        if gradient.kind in _MEAN_FNS:
            gs = pp_glm(labeled, unlabeled, alpha, grid, gradient.kind, profile=True)
        else:
            stats = _convex_statistics(labeled, unlabeled, gradient, grid.points)
            gs = _membership(*stats, labeled.n, unlabeled.N, alpha, grid, profile=True)
        out.append(gs)
    return out
