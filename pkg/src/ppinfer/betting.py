"""Betting (test-supermartingale) confidence intervals for a bounded mean.

Implements the variance-adaptive hedged-capital construction for i.i.d.
samples and its sampling-without-replacement form. Data are normalized to
[0, 1]; every candidate mean ``m`` on a grid runs two capital processes
(betting up and down) and is discarded once half their maximum reaches
``1/alpha``. The returned interval is the hull of surviving candidates,
mapped back to the original range.

Capital is tracked in log space. Time is processed in blocks and only the
candidates still alive are advanced, so cost scales with the number of
survivors rather than the full grid. Hull endpoints are refined by bisection
on the continuous candidate, so the result does not depend on whether the
true mean falls on a grid point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ci_core import Interval
from .errors import DomainError

__all__ = [
    "BettingConfig",
    "MartingaleState",
    "default_schedule",
    "wsr_mean_ci",
    "wsr_finite_pop_ci",
    "wsr_trace",
]

_EVERY_STEP_LIMIT = 10_000
_GEOMETRIC_RATIO = 1.01
# Upper bound on candidates x steps held in memory per block.
_BLOCK_CELLS = 1 << 14


@dataclass(frozen=True)
class BettingConfig:
    """Parameters of a betting interval.

    Args:
        alpha: error level in (0, 1).
        range_low, range_high: known bounds on every observation.
        grid_resolution: number of candidate means on the normalized [0, 1] grid.
        intersection_schedule: 1-based times at which candidates may be
            rejected. ``None`` picks :func:`default_schedule`.
    """

    alpha: float
    range_low: float = 0.0
    range_high: float = 1.0
    grid_resolution: int = 1000
    intersection_schedule: Optional[Sequence[int]] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.range_low < self.range_high:
            raise DomainError("range_low must be strictly below range_high")
        if self.grid_resolution < 2:
            raise DomainError("grid_resolution must be at least 2")

    def with_alpha(self, alpha: float) -> "BettingConfig":
        return BettingConfig(
            alpha, self.range_low, self.range_high, self.grid_resolution, self.intersection_schedule
        )

    def with_range(self, low: float, high: float) -> "BettingConfig":
        return BettingConfig(self.alpha, low, high, self.grid_resolution, self.intersection_schedule)


@dataclass
class MartingaleState:
    """Capital of the two betting processes for one candidate mean."""

    m: float
    capital_plus: float = 1.0
    capital_minus: float = 1.0
    rejected: bool = False


def default_schedule(n: int) -> np.ndarray:
    """Every step up to 10^4 observations, otherwise a geometric subsequence ending at n."""
    if n <= _EVERY_STEP_LIMIT:
        return np.arange(1, n + 1)
    times = {n}
    t = 1.0
    while t < n:
        times.add(int(math.ceil(t)))
        t *= _GEOMETRIC_RATIO
    return np.array(sorted(times))


def _normalize(samples, config: BettingConfig) -> np.ndarray:
    z = np.asarray(samples, dtype=float).ravel()
    if z.size == 0:
        raise DomainError("sample is empty")
    if not np.all(np.isfinite(z)):
        raise DomainError("sample contains non-finite values")
    L, U = config.range_low, config.range_high
    if z.min() < L or z.max() > U:
        raise DomainError(
            f"sample outside declared range [{L}, {U}]: observed [{z.min()}, {z.max()}]"
        )
    return np.clip((z - L) / (U - L), 0.0, 1.0)


def _bets(z: np.ndarray, alpha: float) -> np.ndarray:
    """Predictable bet sizes lambda_t, t = 1..n."""
    n = z.size
    t = np.arange(1, n + 1, dtype=float)
    s1 = np.cumsum(z)
    s2 = np.cumsum(z * z)
    mu = (0.5 + s1) / (t + 1)
    # sum_{j<=t} (z_j - mu_t)^2 expanded around the current running mean
    ss = s2 - 2.0 * mu * s1 + t * mu * mu
    sigma2 = (0.25 + np.maximum(ss, 0.0)) / (t + 1)
    sigma2_prev = np.concatenate(([0.25], sigma2[:-1]))
    return np.sqrt(2.0 * math.log(2.0 / alpha) / (n * sigma2_prev))


def _check_mask(n: int, schedule) -> np.ndarray:
    times = default_schedule(n) if schedule is None else np.asarray(schedule, dtype=int)
    if times.size and (times.min() < 1 or times.max() > n):
        raise DomainError("intersection schedule must lie within 1..n")
    mask = np.zeros(n, dtype=bool)
    mask[times - 1] = True
    return mask


# Slack on the putative-mean range check so rounding at the true mean never
# marks it impossible.
_IMPOSSIBLE_TOL = 1e-9
_BISECT_TOL = 1e-10
_SECTIONS = 15


class _Process:
    """Capital processes for one data sequence, evaluated at arbitrary candidates."""

    def __init__(self, z, alpha, check, population_size=None):
        self.z = z
        self.n = z.size
        self.lam = _bets(z, alpha)
        self.check = check
        self.log_threshold = -math.log(alpha)
        self.N = population_size
        if population_size is not None:
            self.prefix = np.concatenate(([0.0], np.cumsum(z)[:-1]))  # sum_{j<t} z_j
            self.remaining = population_size - np.arange(self.n, dtype=float)  # N - t + 1

    def run(self, grid, trace=False):
        """Survival mask over ``grid``; with ``trace`` also final log-capitals."""
        n = self.n
        G = grid.size
        alive = np.ones(G, dtype=bool)
        log_plus = np.zeros(G)
        log_minus = np.zeros(G)
        min_log_capital = 0.0
        start = 0
        while start < n and alive.any():
            idx = np.flatnonzero(alive)
            block = max(16, min(n - start, _BLOCK_CELLS // idx.size))
            stop = min(n, start + block)
            zb = self.z[start:stop]
            lb = self.lam[start:stop]
            m = grid[idx][:, None]
            if self.N is None:
                mu = np.broadcast_to(m, (idx.size, stop - start))
                impossible = None
            else:
                mu = (self.N * m - self.prefix[start:stop]) / self.remaining[start:stop]
                impossible = (mu < -_IMPOSSIBLE_TOL) | (mu > 1.0 + _IMPOSSIBLE_TOL)
                mu = np.clip(mu, 0.0, 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                bet_plus = np.minimum(lb, 0.5 / mu)
                bet_minus = np.minimum(lb, 0.5 / (1.0 - mu))
                step_plus = np.log1p(bet_plus * (zb - mu))
                step_minus = np.log1p(-bet_minus * (zb - mu))
            cum_plus = log_plus[idx][:, None] + np.cumsum(step_plus, axis=1)
            cum_minus = log_minus[idx][:, None] + np.cumsum(step_minus, axis=1)
            log_m = np.maximum(cum_plus, cum_minus) - math.log(2.0)
            hit = (log_m >= self.log_threshold) & self.check[start:stop]
            if impossible is not None:
                hit |= impossible
            rejected = hit.any(axis=1)
            if trace:
                low = np.minimum(cum_plus, cum_minus)
                min_log_capital = min(min_log_capital, float(np.min(low)))
            log_plus[idx] = cum_plus[:, -1]
            log_minus[idx] = cum_minus[:, -1]
            alive[idx[rejected]] = False
            start = stop
        if trace:
            return alive, log_plus, log_minus, min_log_capital
        return alive

    def boundary(self, inside: float, outside: float) -> float:
        """Locate the survival boundary between a surviving and a rejected candidate.

        Multisection: each pass tests ``_SECTIONS`` interior points in one
        vectorized run and keeps the bracket around the first rejection seen
        walking out from ``inside``. Returns the rejected end of the bracket.
        """
        while abs(outside - inside) > _BISECT_TOL:
            points = np.linspace(inside, outside, _SECTIONS + 2)[1:-1]
            alive = self.run(points)
            dead = np.flatnonzero(~alive)
            if dead.size == 0:
                inside = points[-1]
                continue
            k = dead[0]
            outside = points[k]
            if k > 0:
                inside = points[k - 1]
        return outside


def _interval(process: _Process, config: BettingConfig) -> Interval:
    """Hull of the surviving candidates, endpoints refined by bisection.

    The grid locates the surviving region; the sample mean is added as an
    extra candidate so a region narrower than one grid cell is still found.
    Each hull end is then bisected against its rejected neighbour (or the
    range boundary) and the rejected side of the final bracket is returned.
    """
    L, U = config.range_low, config.range_high
    level = 1.0 - config.alpha
    grid = np.linspace(0.0, 1.0, config.grid_resolution)
    grid = np.unique(np.append(grid, float(np.mean(process.z))))
    alive = process.run(grid)
    survivors = np.flatnonzero(alive)
    if survivors.size == 0:
        return Interval(L, U, level, empty=True)
    first, last = survivors[0], survivors[-1]
    lo = 0.0 if first == 0 else process.boundary(grid[first], grid[first - 1])
    hi = 1.0 if last == grid.size - 1 else process.boundary(grid[last], grid[last + 1])
    return Interval(float(L + lo * (U - L)), float(L + hi * (U - L)), level)


def wsr_mean_ci(samples, config: BettingConfig) -> Interval:
    """Nonasymptotic confidence interval for the mean of i.i.d. bounded samples.

    Every sample must lie in ``[config.range_low, config.range_high]``. An empty
    surviving set (possible only under model violation) returns the whole
    range flagged ``empty``.
    """
    z = _normalize(samples, config)
    check = _check_mask(z.size, config.intersection_schedule)
    return _interval(_Process(z, config.alpha, check), config)


def wsr_finite_pop_ci(samples, population_size: int, config: BettingConfig) -> Interval:
    """Betting interval for the mean of a finite population sampled without replacement.

    ``samples`` must be in the order they were drawn. Candidates whose
    putative mean for the remaining units leaves [0, 1] are rejected
    immediately.
    """
    z = _normalize(samples, config)
    N = int(population_size)
    if z.size > N:
        raise DomainError(f"sample size {z.size} exceeds population size {N}")
    check = _check_mask(z.size, config.intersection_schedule)
    return _interval(_Process(z, config.alpha, check, population_size=N), config)


def wsr_trace(samples, config: BettingConfig, population_size=None):
    """Final :class:`MartingaleState` per grid candidate plus the minimum log-capital seen.

    Diagnostic companion to the interval functions. Candidates rejected early
    keep the capital they had when they were dropped.
    """
    z = _normalize(samples, config)
    grid = np.linspace(0.0, 1.0, config.grid_resolution)
    check = _check_mask(z.size, config.intersection_schedule)
    process = _Process(z, config.alpha, check, population_size)
    alive, lp, lm, min_log = process.run(grid, trace=True)
    states = [
        MartingaleState(float(m), math.exp(a), math.exp(b), not ok)
        for m, a, b, ok in zip(grid, lp, lm, alive)
    ]
    return states, min_log
