"""Synthetic data generators and the Monte Carlo coverage engine.

Each trial draws a fresh labeled and unlabeled sample, builds the
prediction-powered, classical and imputation intervals, and records whether
each contains the known estimand. Trial t uses the random stream
SeedSequence(seed, spawn_key=(t,)), the same stream ``SeedSequence(seed).spawn``
hands out, so results do not depend on how trials are spread over workers.
"""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..betting import BettingConfig, wsr_mean_ci
from ..ci_core import Interval, clt_mean_interval, normal_quantile
from ..datasets import EstimandSpec, LabeledSet, UnlabeledSet
from ..errors import DomainError
from ..estimators import EmptySetWarning, GridSet, GridSpec, pp_mean, pp_quantile, squared_gradient
from ..nonasymptotic import BudgetSplit, pp_mean_na
from ..shift import WeightFunction, label_shift_interval, pp_convex_covshift
from .baselines import classical_result, imputation_result
from .report import METHODS, CoverageReport

__all__ = [
    "Gaussian",
    "Bernoulli",
    "CovShift",
    "LabelShift",
    "SimScenario",
    "trial_rng",
    "run_trial",
    "coverage_sim",
]

COVSHIFT_GRID_POINTS = 1001


# ---------------------------------------------------------------- generators


@dataclass(frozen=True)
class Gaussian:
    """Y ~ N(mean, sd^2); prediction f = Y + bias + noise * eps with eps ~ N(0, 1)."""

    bias: float = 0.0
    noise: float = 1.0
    mean: float = 0.0
    sd: float = 1.0

    name = "gaussian"
    kinds = ("mean", "quantile")
    bound = None

    def __post_init__(self):
        if self.noise < 0 or self.sd <= 0:
            raise DomainError(f"gaussian needs noise >= 0 and sd > 0, got {self.noise}, {self.sd}")

    def _pair(self, rng, m):
        y = rng.normal(self.mean, self.sd, size=m)
        return y, y + self.bias + self.noise * rng.normal(size=m)

    def draw(self, rng, n, N):
        y, f = self._pair(rng, n)
        _, ft = self._pair(rng, N)
        return LabeledSet(y, f), UnlabeledSet(ft)

    def truth(self, estimand: EstimandSpec) -> float:
        if estimand.kind == "quantile":
            return self.mean + self.sd * normal_quantile(estimand.q)
        return self.mean


@dataclass(frozen=True)
class Bernoulli:
    """Y ~ Bernoulli(p); the prediction is Y flipped with probability eta."""

    p: float = 0.3
    eta: float = 0.1

    name = "bernoulli"
    kinds = ("mean",)
    bound = 1.0

    def __post_init__(self):
        if not (0 < self.p < 1 and 0 <= self.eta <= 1):
            raise DomainError(f"bernoulli needs p in (0, 1) and eta in [0, 1], got {self.p}, {self.eta}")

    def _pair(self, rng, m):
        y = (rng.random(m) < self.p).astype(float)
        flip = rng.random(m) < self.eta
        return y, np.where(flip, 1.0 - y, y)

    def draw(self, rng, n, N):
        y, f = self._pair(rng, n)
        _, ft = self._pair(rng, N)
        return LabeledSet(y, f), UnlabeledSet(ft)

    def truth(self, estimand: EstimandSpec) -> float:
        return self.p


@dataclass(frozen=True)
class CovShift:
    """Two groups g in {0, 1}; Y = +1 or -1 by group plus N(0, 1) noise.

    P(g = 1) is ``source_share`` in the labeled data and ``target_share``
    in the unlabeled data; the estimand is the target mean of Y.
    """

    target_share: float = 0.8
    source_share: float = 0.5
    bias: float = 0.3
    noise: float = 0.5

    name = "covshift"
    kinds = ("mean",)
    bound = None

    def __post_init__(self):
        if not (0 < self.source_share < 1 and 0 <= self.target_share <= 1):
            raise DomainError("group shares must lie in [0, 1], with the source share strictly inside")

    @property
    def weight_pair(self) -> tuple:
        """Density ratio (w(g = 0), w(g = 1))."""
        return ((1 - self.target_share) / (1 - self.source_share), self.target_share / self.source_share)

    def weights(self) -> WeightFunction:
        w0, w1 = self.weight_pair
        return WeightFunction.by_group(0, {0.0: w0, 1.0: w1})

    def _sample(self, rng, m, share):
        g = (rng.random(m) < share).astype(float)
        y = np.where(g == 1, 1.0, -1.0) + rng.normal(size=m)
        f = y + self.bias + self.noise * rng.normal(size=m)
        return g[:, None], y, f

    def draw(self, rng, n, N):
        X, y, f = self._sample(rng, n, self.source_share)
        Xt, _, ft = self._sample(rng, N, self.target_share)
        return LabeledSet(y, f, X), UnlabeledSet(ft, Xt)

    def truth(self, estimand: EstimandSpec) -> float:
        return 2.0 * self.target_share - 1.0


@dataclass(frozen=True)
class LabelShift:
    """Binary classes 1 and 2 with priors P(Y = 1) shifted from source to target.

    The prediction is Y switched to the other class with probability eta;
    the estimand is P_target(Y = 1).
    """

    prior_source: float = 0.5
    prior_target: float = 0.7
    eta: float = 0.1

    name = "labelshift"
    kinds = ("mean",)
    bound = None

    def __post_init__(self):
        if not (0 < self.prior_source < 1 and 0 <= self.prior_target <= 1 and 0 <= self.eta < 0.5):
            raise DomainError("label shift needs priors in [0, 1] (source strictly inside) and eta in [0, 0.5)")

    def _pair(self, rng, m, prior):
        y = np.where(rng.random(m) < prior, 1.0, 2.0)
        return y, np.where(rng.random(m) < self.eta, 3.0 - y, y)

    def draw(self, rng, n, N):
        y, f = self._pair(rng, n, self.prior_source)
        _, ft = self._pair(rng, N, self.prior_target)
        return LabeledSet(y, f), UnlabeledSet(ft)

    def truth(self, estimand: EstimandSpec) -> float:
        return self.prior_target


GENERATORS = {g.name: g for g in (Gaussian, Bernoulli, CovShift, LabelShift)}


# ---------------------------------------------------------------- scenario


@dataclass(frozen=True)
class SimScenario:
    """One Monte Carlo configuration.

    Args:
        generator: a generator instance (Gaussian, Bernoulli, CovShift, LabelShift).
        n: labeled sample size per trial.
        N: unlabeled sample size per trial.
        trials: number of independent trials.
        seed: master seed; recorded in every report.
        estimand: target and error level.
        nonasymptotic: use betting intervals for the mean (bounded generators only).
    """

    generator: object
    n: int
    N: int
    trials: int
    seed: int
    estimand: EstimandSpec = field(default_factory=lambda: EstimandSpec("mean"))
    nonasymptotic: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise DomainError(f"trials must be at least 1, got {self.trials}")
        if self.n < 2 or self.N < 2:
            raise DomainError(f"need n >= 2 and N >= 2, got n={self.n}, N={self.N}")
        if self.estimand.kind not in self.generator.kinds:
            raise DomainError(
                f"generator {self.generator.name!r} supports estimands {self.generator.kinds}, "
                f"not {self.estimand.kind!r}"
            )
        if self.nonasymptotic and (self.generator.bound is None or self.estimand.kind != "mean"):
            raise DomainError("nonasymptotic simulation needs a bounded generator and the mean estimand")

    @property
    def truth(self) -> float:
        return float(self.generator.truth(self.estimand))

    def describe(self) -> str:
        g = self.generator
        params = ", ".join(f"{k}={getattr(g, k)!r}" for k in g.__dataclass_fields__)
        est = self.estimand
        extra = f", q={est.q}" if est.kind == "quantile" else ""
        return (f"{g.name}({params}) estimand={est.kind}{extra} alpha={est.alpha} n={self.n} N={self.N} "
                f"trials={self.trials} seed={self.seed} nonasymptotic={self.nonasymptotic}")


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one trial, equal to ``SeedSequence(seed).spawn(...)[trial]``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _record(result, truth):
    """(lower, upper, width, covered) for an Interval or a grid set."""
    if isinstance(result, GridSet):
        if result.empty:
            return math.nan, math.nan, 0.0, False
        iv = result.interval(0)
        return iv.lower, iv.upper, iv.width, result.covers(truth)
    return result.lower, result.upper, result.width, result.contains(truth)


def _split(estimand: EstimandSpec) -> BudgetSplit:
    return BudgetSplit(estimand.alpha, estimand.delta)


def _wsr(values, alpha, bound) -> Interval:
    return wsr_mean_ci(values, BettingConfig(alpha, 0.0, bound))


def _methods(scenario: SimScenario, labeled, unlabeled):
    g, est = scenario.generator, scenario.estimand
    alpha = est.alpha
    if g.name == "covshift":
        w = g.weights()
        ft = unlabeled.predictions
        grid = GridSpec.linspace(float(ft.min()), float(ft.max()), COVSHIFT_GRID_POINTS)
        pp = pp_convex_covshift(labeled, unlabeled, squared_gradient(), w, alpha, grid)
        classical = clt_mean_interval(w(labeled.features) * labeled.outcomes, alpha)
        return pp, classical, clt_mean_interval(ft, alpha)
    if g.name == "labelshift":
        pp = label_shift_interval(labeled, unlabeled, [1.0, 0.0], _split(est)).interval
        classical = clt_mean_interval((labeled.outcomes == 1).astype(float), alpha)
        return pp, classical, clt_mean_interval((unlabeled.predictions == 1).astype(float), alpha)
    if scenario.nonasymptotic:
        pp = pp_mean_na(labeled, unlabeled, _split(est), g.bound)
        return pp, _wsr(labeled.outcomes, alpha, g.bound), _wsr(unlabeled.predictions, alpha, g.bound)
    if est.kind == "quantile":
        pp = pp_quantile(labeled, unlabeled, est.q, alpha)
    else:
        pp = pp_mean(labeled, unlabeled, alpha)
    return pp, classical_result(labeled, est), imputation_result(unlabeled, est)


def run_trial(scenario: SimScenario, trial: int) -> np.ndarray:
    """One trial: (3, 4) array of (lower, upper, width, covered) for pp, classical, imputation."""
    labeled, unlabeled = scenario.generator.draw(trial_rng(scenario.seed, trial), scenario.n, scenario.N)
    truth = scenario.truth
    with warnings.catch_warnings():
        # an empty set is tallied as a miss
        warnings.simplefilter("ignore", EmptySetWarning)
        results = _methods(scenario, labeled, unlabeled)
    return np.array([_record(r, truth) for r in results], dtype=float)


def _run_block(args):
    scenario, start, stop = args
    return np.stack([run_trial(scenario, t) for t in range(start, stop)])


def coverage_sim(scenario: SimScenario, workers: int = 1, block: Optional[int] = None) -> CoverageReport:
    """Run every trial of ``scenario`` and tally coverage and width per method.

    Args:
        workers: worker processes; 1 runs in this process. Output does not
            depend on this value.
        block: trials per task sent to a worker (default: spread evenly).
    """
    if workers < 1:
        raise DomainError(f"workers must be at least 1, got {workers}")
    start = time.perf_counter()
    T = scenario.trials
    if workers == 1:
        rows = _run_block((scenario, 0, T))
    else:
        block = block or max(1, math.ceil(T / (4 * workers)))
        tasks = [(scenario, s, min(s + block, T)) for s in range(0, T, block)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = np.concatenate(list(pool.map(_run_block, tasks)))
    return CoverageReport(
        scenario=scenario,
        methods=METHODS,
        lower=rows[:, :, 0],
        upper=rows[:, :, 1],
        width=rows[:, :, 2],
        covered=rows[:, :, 3].astype(bool),
        wall_time=time.perf_counter() - start,
    )
