"""P-values by confidence-set inversion, and the odds ratio of two means.

The p-value for H0: theta* in Theta0 is the smallest alpha at which the
level-(1 - alpha) prediction-powered set excludes all of Theta0. Sets built
here are nested in alpha by construction: only the normal quantile scaling
the half-width depends on alpha.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ci_core import Interval, normal_cdf, normal_quantile
from .datasets import EstimandSpec, LabeledSet, UnlabeledSet
from .errors import DomainError
from .estimators import (
    EmptySetWarning,
    GridSpec,
    default_grid,
    logistic_gradient,
    ols_components,
    pp_logistic,
    pp_mean_se,
    pp_quantile,
    quantile_grid,
)

__all__ = ["NullSpec", "PValue", "pp_p_value", "odds_ratio_interval", "ALPHA_TOLERANCE"]

NULL_KINDS = ("point", "le", "ge", "set")
ALPHA_TOLERANCE = 1e-4
# Reference level at which gridded statistics are evaluated once; any value works.
_REF_ALPHA = 0.5


@dataclass(frozen=True)
class NullSpec:
    """Null hypothesis on a scalar coordinate.

    Args:
        kind: ``point`` (theta = value), ``le`` (theta <= value), ``ge``
            (theta >= value) or ``set`` (theta in values).
        value: the point or one-sided bound.
        values: finite set of null points for ``set``.
    """

    kind: str
    value: Optional[float] = None
    values: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in NULL_KINDS:
            raise DomainError(f"unknown null kind {self.kind!r}; expected one of {NULL_KINDS}")
        if self.kind == "set":
            vals = tuple(float(v) for v in (self.values or ()))
            if not vals or not all(math.isfinite(v) for v in vals):
                raise DomainError("a finite-set null needs at least one finite value")
            object.__setattr__(self, "values", vals)
        else:
            if self.value is None or not math.isfinite(float(self.value)):
                raise DomainError(f"null kind {self.kind!r} needs a finite value")
            object.__setattr__(self, "value", float(self.value))

    @classmethod
    def point(cls, value: float) -> "NullSpec":
        return cls("point", value)

    def distance(self, estimate: float) -> float:
        """Distance from ``estimate`` to the nearest null point."""
        if self.kind == "point":
            return abs(estimate - self.value)
        if self.kind == "le":
            return max(estimate - self.value, 0.0)
        if self.kind == "ge":
            return max(self.value - estimate, 0.0)
        return min(abs(estimate - v) for v in self.values)

    def restrict(self, ticks: np.ndarray) -> np.ndarray:
        """Null points on a coordinate axis: matching ticks plus the boundary value."""
        if self.kind == "point":
            return np.array([self.value])
        if self.kind == "set":
            return np.array(self.values)
        keep = ticks <= self.value if self.kind == "le" else ticks >= self.value
        return np.union1d(ticks[keep], [self.value])


@dataclass(frozen=True)
class PValue:
    """A p-value and how it was obtained.

    ``tolerance`` is 0 for closed-form inversion; for gridded sets the value is
    the upper end of a bisection bracket of that width, so it never
    understates the infimum over the evaluated null points.
    """

    value: float
    method: str
    tolerance: float = 0.0

    def __float__(self) -> float:
        return self.value


def _two_sided_tail(dist: float, se: float) -> float:
    if se == 0.0:
        return 1.0 if dist == 0.0 else 0.0
    return min(1.0, 2.0 * (1.0 - normal_cdf(dist / se)))


def _bisect_alpha(stat: np.ndarray, unit: np.ndarray, p: int) -> float:
    """Smallest alpha (to ALPHA_TOLERANCE) at which every null point is excluded.

    A point is retained at alpha when |stat| <= z_{1 - alpha/(2p)} * unit in
    every coordinate. The retained region shrinks as alpha grows, so the
    rejection event is monotone and bisection is exact up to the bracket.
    """
    def rejected(a):
        z = normal_quantile(1.0 - a / (2.0 * p))
        return not np.any(np.all(np.abs(stat) <= z * unit, axis=1))

    if not rejected(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > ALPHA_TOLERANCE:
        mid = 0.5 * (lo + hi)
        if rejected(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _gridded_statistics(estimand, labeled, unlabeled, null):
    """(stat, unit, p) over the null points of the gridded estimand."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        if estimand.kind == "quantile":
            ticks = quantile_grid(unlabeled).points[:, 0]
            grid = GridSpec.from_points(null.restrict(ticks))
            gs = pp_quantile(labeled, unlabeled, estimand.q, _REF_ALPHA, grid)
            p = 1
        else:
            d = labeled.d
            j = estimand.check_coordinate(d)
            base = default_grid(labeled, unlabeled, logistic_gradient(d), _REF_ALPHA)
            ticks = [np.linspace(lo, hi, r) for lo, hi, r in base.axes]
            ticks[j] = null.restrict(ticks[j])
            mesh = np.meshgrid(*ticks, indexing="ij")
            grid = GridSpec.from_points(np.column_stack([m.ravel() for m in mesh]))
            gs = pp_logistic(labeled, unlabeled, _REF_ALPHA, grid)
            p = d
    unit = np.asarray(gs.half_width) / normal_quantile(1.0 - _REF_ALPHA / (2.0 * p))
    stat = np.asarray(gs.statistic)
    finite = np.all(np.isfinite(stat), axis=1)
    return stat[finite], unit[finite], p


def pp_p_value(estimand: EstimandSpec, labeled: LabeledSet, unlabeled: UnlabeledSet,
               null: NullSpec) -> PValue:
    """Prediction-powered p-value for H0: theta* in Theta0.

    Mean and OLS: 2 (1 - Phi(dist / se)), where dist is the distance from the
    prediction-powered estimate to the nearest null point and se the standard
    error behind the interval. Quantile and logistic: bisection over alpha on
    the gridded confidence set. For logistic with d > 1 the nuisance
    coordinates range over the default lattice, so the supremum over Theta0
    is approximated on that lattice.

    Raises:
        DomainError: for estimands other than mean, quantile, logistic, ols.
    """
    kind = estimand.kind
    if kind == "mean":
        est, se = pp_mean_se(labeled, unlabeled)
        return PValue(_two_sided_tail(null.distance(est), se), "closed-form")
    if kind == "ols":
        j = estimand.check_coordinate(labeled.require_features().shape[1])
        theta, V, Vt = ols_components(labeled, unlabeled)
        se = math.sqrt(max(V[j, j] / labeled.n + Vt[j, j] / unlabeled.N, 0.0))
        return PValue(_two_sided_tail(null.distance(float(theta[j])), se), "closed-form")
    if kind in ("quantile", "logistic"):
        stat, unit, p = _gridded_statistics(estimand, labeled, unlabeled, null)
        if stat.shape[0] == 0:
            return PValue(0.0, "bisection", ALPHA_TOLERANCE)
        return PValue(_bisect_alpha(stat, unit, p), "bisection", ALPHA_TOLERANCE)
    raise DomainError(f"p-values are available for mean, quantile, logistic and ols, not {kind!r}")


# ---------------------------------------------------------------- odds ratio


def odds_ratio_interval(mu0_ci: Interval, mu1_ci: Interval) -> Interval:
    """Interval for (mu1 / (1 - mu1)) / (mu0 / (1 - mu0)) from intervals on the two means.

    The odds ratio increases in mu1 and decreases in mu0, so the endpoints
    pair the lower end of mu1 with the upper end of mu0 and vice versa.
    Levels combine by a union bound: two intervals at 1 - alpha/2 give one
    at 1 - alpha.

    Returns:
        Interval; an upper end driven to infinity (mu1 upper at 1 or mu0
        lower at 0) is flagged ``upper_unbounded``.

    Raises:
        DomainError: if an input leaves [0, 1], the combined level is not
            positive, or the lower end is infinite (mu1 lower at 1 or mu0
            upper at 0), which puts the whole interval at infinity.
    """
    for name, ci in (("mu0", mu0_ci), ("mu1", mu1_ci)):
        if ci.lower < 0.0 or ci.upper > 1.0:
            raise DomainError(f"{name} interval [{ci.lower}, {ci.upper}] must lie within [0, 1]")
    level = 1.0 - ((1.0 - mu0_ci.level) + (1.0 - mu1_ci.level))
    if level <= 0.0:
        raise DomainError(f"combined level {level} is not positive; tighten the input intervals")
    l0, u0, l1, u1 = mu0_ci.lower, mu0_ci.upper, mu1_ci.lower, mu1_ci.upper
    if l1 == 1.0 or u0 == 0.0:
        raise DomainError("odds ratio is infinite over the whole interval (mu1 = 1 or mu0 = 0)")
    lower = (l1 * (1.0 - u0)) / ((1.0 - l1) * u0)
    if u1 == 1.0 or l0 == 0.0:
        return Interval(lower, math.inf, level, upper_unbounded=True)
    upper = (u1 * (1.0 - l0)) / ((1.0 - u1) * l0)
    return Interval(lower, upper, level, degenerate=lower == upper)
