"""Scalar statistical primitives.

Normal quantiles, population-divisor moments, CLT intervals for the mean
(i.i.d. and without replacement), binomial CDF machinery and the DKWM radius.
Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import betainc, gammaln

from .errors import DomainError

__all__ = [
    "Interval",
    "SampleMoments",
    "sample_moments",
    "normal_cdf",
    "normal_quantile",
    "clt_mean_interval",
    "finite_pop_clt_interval",
    "binomial_cdf",
    "binomial_cdf_inverse",
    "binomial_cdf_over_p",
    "dkwm_radius",
]


@dataclass(frozen=True)
class Interval:
    """A closed real interval carrying its confidence level (1 - alpha).

    ``degenerate`` marks a zero-variance construction (point interval).
    ``empty`` marks a set-valued procedure whose retained set was empty; the
    endpoints are then a conservative fallback documented by the producer.
    Infinite endpoints are only allowed when the matching ``*_unbounded``
    flag is set.
    """

    lower: float
    upper: float
    level: float
    degenerate: bool = False
    empty: bool = False
    lower_unbounded: bool = False
    upper_unbounded: bool = False

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise DomainError(f"interval level must lie in (0, 1), got {self.level}")
        if math.isnan(self.lower) or math.isnan(self.upper):
            raise DomainError("interval endpoints must not be NaN")
        if math.isinf(self.lower) and not self.lower_unbounded:
            raise DomainError("infinite lower endpoint must be flagged unbounded")
        if math.isinf(self.upper) and not self.upper_unbounded:
            raise DomainError("infinite upper endpoint must be flagged unbounded")
        if self.lower > self.upper:
            raise DomainError(f"lower endpoint {self.lower} exceeds upper {self.upper}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lower - tol <= value <= self.upper + tol


@dataclass(frozen=True)
class SampleMoments:
    n: int
    mean: float
    variance: float


def _as_sample(samples) -> np.ndarray:
    z = np.asarray(samples, dtype=float).ravel()
    if z.size == 0:
        raise DomainError("sample is empty")
    if not np.all(np.isfinite(z)):
        raise DomainError("sample contains non-finite values")
    return z


def sample_moments(samples) -> SampleMoments:
    """Mean and variance with divisor n."""
    z = _as_sample(samples)
    mean = float(np.mean(z))
    var = float(np.mean((z - mean) ** 2))
    return SampleMoments(n=z.size, mean=mean, variance=var)


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


@lru_cache(maxsize=4096)
def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF by bisection on ``normal_cdf``.

    Bisection runs until the bracket is narrower than 1e-13, well inside the
    1e-9 target.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"normal quantile needs p in (0, 1), got {p}")
    if p == 0.5:
        return 0.0
    lo, hi = -40.0, 40.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def clt_mean_interval(samples, alpha: float) -> Interval:
    """Normal-approximation interval ``mean +/- z_{1-alpha/2} * sd / sqrt(n)``.

    Uses the divisor-n standard deviation. A zero-variance sample yields a
    point interval flagged ``degenerate``.
    """
    _check_alpha(alpha)
    m = sample_moments(samples)
    half = normal_quantile(1 - alpha / 2) * math.sqrt(m.variance / m.n)
    return Interval(m.mean - half, m.mean + half, 1 - alpha, degenerate=m.variance == 0.0)


def finite_pop_clt_interval(samples, population_size: int, alpha: float) -> Interval:
    """CLT interval for sampling without replacement from ``population_size`` units."""
    _check_alpha(alpha)
    m = sample_moments(samples)
    N = int(population_size)
    if N < 1:
        raise DomainError("population size must be at least 1")
    if m.n > N:
        raise DomainError(f"sample size {m.n} exceeds population size {N}")
    fpc = math.sqrt((N - m.n) / N)
    half = normal_quantile(1 - alpha / 2) * math.sqrt(m.variance / m.n) * fpc
    return Interval(
        m.mean - half, m.mean + half, 1 - alpha, degenerate=(m.variance == 0.0 or fpc == 0.0)
    )


def _binomial_cdf_table(n: int, p: float) -> np.ndarray:
    """CDF values F(0..n) from a log-space cumulative sum of the pmf."""
    if p <= 0.0:
        return np.ones(n + 1)
    if p >= 1.0:
        table = np.zeros(n + 1)
        table[-1] = 1.0
        return table
    k = np.arange(n + 1)
    logpmf = (
        gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        + k * math.log(p) + (n - k) * math.log1p(-p)
    )
    table = np.exp(np.logaddexp.accumulate(logpmf))
    np.clip(table, 0.0, 1.0, out=table)
    table[-1] = 1.0
    return table


def _check_binom(n: int, p: float) -> None:
    if n < 0:
        raise DomainError(f"binomial size must be nonnegative, got {n}")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"binomial probability must lie in [0, 1], got {p}")


def binomial_cdf(k: int, n: int, p: float) -> float:
    """P(Binom(n, p) <= k)."""
    _check_binom(n, p)
    if k < 0:
        raise DomainError(f"k must be nonnegative, got {k}")
    if k > n:
        raise DomainError(f"k={k} exceeds n={n}")
    return float(_binomial_cdf_table(n, p)[k])


# Absorbs rounding in the cumulative sum so that F(k) compared against a level
# computed from the same table is stable.
_INVERSE_SLACK = 1e-12


def binomial_cdf_inverse(level: float, n: int, p: float) -> int:
    """Smallest k with ``binomial_cdf(k, n, p) >= level``."""
    _check_binom(n, p)
    if not 0.0 < level <= 1.0:
        raise DomainError(f"level must lie in (0, 1], got {level}")
    table = _binomial_cdf_table(n, p)
    if level >= 1.0:
        # first k whose computed CDF is exactly 1; n unless the tail underflows
        return int(np.argmax(table >= 1.0))
    return int(np.searchsorted(table, level - _INVERSE_SLACK, side="left"))


def binomial_cdf_over_p(k: int, n: int, ps) -> np.ndarray:
    """P(Binom(n, p) <= k) for every p in ``ps``, via the regularized incomplete beta."""
    ps = np.asarray(ps, dtype=float)
    if n < 0 or not 0 <= k:
        raise DomainError(f"need 0 <= k and n >= 0, got k={k}, n={n}")
    if np.any((ps < 0.0) | (ps > 1.0)):
        raise DomainError("binomial probabilities must lie in [0, 1]")
    if k >= n:
        return np.ones_like(ps)
    # F(k; n, p) = I_{1-p}(n - k, k + 1)
    return betainc(n - k, k + 1, 1.0 - ps)


def dkwm_radius(unlabeled_count: int, level: float) -> float:
    """sqrt((2/N) log(2/level)): sup-norm band on an empirical class distribution."""
    if unlabeled_count < 1:
        raise DomainError("unlabeled count must be at least 1")
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    return math.sqrt(2.0 / unlabeled_count * math.log(2.0 / level))
