"""Prediction-powered inference under distribution shift.

Covariate shift: with known density ratio w(x) = dQ_X/dP_X, the gradient of
the loss is reweighted by w and the convex pipeline runs unchanged.

Label shift: the class proportions in the target differ, while P(f | Y) is
shared. The confusion matrix K (column l is the distribution of f given
Y = l) is estimated on the labeled data and inverted against the empirical
prediction frequencies of the unlabeled data. The interval adds a binomial
band on every confusion entry and a DKW-type band on the prediction
frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ci_core import Interval, binomial_cdf_over_p, dkwm_radius
from .datasets import LabeledSet, UnlabeledSet
from .errors import DomainError, NumericalError
from .estimators import GradientSpec, GridSet, GridSpec, _convex_set
from .nonasymptotic import BudgetSplit

__all__ = [
    "WeightFunction",
    "pp_convex_covshift",
    "ConfusionEstimate",
    "estimate_confusion",
    "LabelShiftResult",
    "label_shift_interval",
    "confusion_band",
]

CONDITION_LIMIT = 1e8
P_GRID_POINTS = 2000
_P_TOL = 1e-12
_SECTIONS = 63
# Same slack the scalar binomial inverse uses when comparing CDF values to a level.
_CDF_SLACK = 1e-12


# ---------------------------------------------------------------- covariate shift


@dataclass(frozen=True)
class WeightFunction:
    """Known density ratio w(x) = dQ_X/dP_X, evaluated on an (n, d) feature matrix."""

    evaluate: Callable

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        w = np.asarray(self.evaluate(X), dtype=float)
        if w.ndim == 0:
            w = np.full(X.shape[0], float(w))
        if w.shape != (X.shape[0],):
            raise DomainError(f"weights must have shape ({X.shape[0]},), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite")
        if np.any(w < 0):
            raise DomainError(f"weights must be nonnegative; found {w.min()} at row {int(np.argmin(w))}")
        return w

    @classmethod
    def constant(cls, value: float) -> "WeightFunction":
        return cls(lambda X: np.full(X.shape[0], float(value)))

    @classmethod
    def by_group(cls, column: int, weights: dict) -> "WeightFunction":
        """Weight by the value of one categorical feature column."""
        def evaluate(X):
            vals = X[:, column]
            out = np.full(vals.shape, np.nan)
            for key, w in weights.items():
                out[vals == key] = w
            if np.isnan(out).any():
                missing = vals[np.isnan(out)][0]
                raise DomainError(f"no weight given for feature value {missing} in column {column}")
            return out
        return cls(evaluate)


def pp_convex_covshift(labeled: LabeledSet, unlabeled: UnlabeledSet, gradient: GradientSpec,
                       weights: WeightFunction, alpha: float, grid: GridSpec,
                       unlabeled_from: str = "target") -> GridSet:
    """Prediction-powered confidence set for a convex risk minimizer on the target Q.

    Every labeled gradient evaluation is multiplied by w(x). The unlabeled
    sample is assumed drawn from the target, so its imputed gradient is left
    unweighted; with ``unlabeled_from="source"`` both samples come from P and
    both are reweighted.

    Args:
        grid: candidate parameters. Required because a good default window
            would be centred on the (unknown) target minimizer.
    """
    if unlabeled_from not in ("target", "source"):
        raise DomainError(f"unlabeled_from must be 'target' or 'source', got {unlabeled_from!r}")
    w_lab = weights(labeled.require_features())
    w_unl = weights(unlabeled.require_features()) if unlabeled_from == "source" else None
    return _convex_set(labeled, unlabeled, gradient, alpha, grid, w_lab, w_unl)


# ---------------------------------------------------------------- label shift


def _class_codes(values, K, what) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    codes = np.rint(v).astype(int)
    bad = (codes != v) | (codes < 1) | (codes > K)
    if bad.any():
        i = int(np.argmax(bad))
        raise DomainError(f"{what} must be class labels in 1..{K}; row {i + 1} has {v[i]}")
    return codes


@dataclass(frozen=True)
class ConfusionEstimate:
    """Column-stochastic confusion estimate: matrix[j, l] = P_hat(f = j+1 | Y = l+1)."""

    matrix: np.ndarray
    class_counts: np.ndarray
    class_count: int

    def correct_counts(self) -> np.ndarray:
        """Integer counts n(l) * K_hat[j, l]."""
        return np.rint(self.matrix * self.class_counts[None, :]).astype(int)


def estimate_confusion(labeled: LabeledSet, num_classes: Optional[int] = None) -> ConfusionEstimate:
    """Estimate the confusion matrix from labeled outcomes and predictions in 1..K.

    Raises:
        DomainError: if some class has no labeled example.
    """
    K = num_classes or int(max(labeled.outcomes.max(), labeled.predictions.max()))
    y = _class_codes(labeled.outcomes, K, "outcomes")
    f = _class_codes(labeled.predictions, K, "predictions")
    counts = np.bincount(y - 1, minlength=K)
    for l in range(K):
        if counts[l] == 0:
            raise DomainError(f"class {l + 1} has no labeled examples; its confusion column is undefined")
    joint = np.zeros((K, K))
    np.add.at(joint, (f - 1, y - 1), 1.0)
    return ConfusionEstimate(joint / counts[None, :], counts, K)


def _member(x: int, n: int, ps: np.ndarray, tail: float) -> np.ndarray:
    """Whether x lies in [F^{-1}(tail), F^{-1}(1 - tail)] for Binom(n, p), per p."""
    # F^{-1}(a) <= x  iff  F(x) >= a;  F^{-1}(1 - a) >= x  iff  x = 0 or F(x - 1) < 1 - a
    low_ok = binomial_cdf_over_p(x, n, ps) >= tail - _CDF_SLACK
    if x == 0:
        return low_ok
    return low_ok & (binomial_cdf_over_p(x - 1, n, ps) < 1.0 - tail - _CDF_SLACK)


def _edge(x, n, tail, inside, outside) -> float:
    """Multisection between a member and a non-member p; returns the non-member end."""
    while abs(outside - inside) > _P_TOL:
        pts = np.linspace(inside, outside, _SECTIONS + 2)[1:-1]
        miss = np.flatnonzero(~_member(x, n, pts, tail))
        if miss.size == 0:
            inside = pts[-1]
            continue
        k = miss[0]
        outside = pts[k]
        if k > 0:
            inside = pts[k - 1]
    return float(outside)


def confusion_band(count: int, n: int, tail: float, points: int = P_GRID_POINTS) -> tuple:
    """Endpoints of {p : count in the central binomial acceptance region}.

    The set is an interval because both quantile functions are monotone in p.
    It is located on a uniform p-grid and each end is refined by bisection;
    an end strictly inside (0, 1) is reported on the excluded side, so the
    band is never understated.
    """
    ps = np.linspace(0.0, 1.0, points)
    ok = _member(count, n, ps, tail)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        # the region is narrower than a grid cell; search around the point estimate
        centre = count / n
        if not _member(count, n, np.array([centre]), tail)[0]:
            raise NumericalError(f"binomial acceptance band for {count}/{n} is empty")
        lo_i = int(np.searchsorted(ps, centre)) - 1
        return (_edge(count, n, tail, centre, ps[max(lo_i, 0)]),
                _edge(count, n, tail, centre, ps[min(lo_i + 1, points - 1)]))
    first, last = idx[0], idx[-1]
    lo = 0.0 if first == 0 else _edge(count, n, tail, ps[first], ps[first - 1])
    hi = 1.0 if last == points - 1 else _edge(count, n, tail, ps[last], ps[last + 1])
    return lo, hi


@dataclass(frozen=True)
class LabelShiftResult:
    """Interval for nu' Q_Y with its ingredients.

    ``q_hat_y`` is K_hat^{-1} Q_hat_f without clipping, so coordinates can be
    negative when the confusion estimate is noisy.
    """

    interval: Interval
    center: float
    q_hat_f: np.ndarray
    q_hat_y: np.ndarray
    confusion_slack: float
    frequency_slack: float
    confusion: ConfusionEstimate

    @property
    def slacks(self) -> tuple:
        return self.confusion_slack, self.frequency_slack


def label_shift_interval(labeled: LabeledSet, unlabeled: UnlabeledSet, nu, split: BudgetSplit,
                         proof_faithful: bool = False) -> LabelShiftResult:
    """Confidence interval for E_Q[nu(Y)] under label shift.

    Centre nu' K_hat^{-1} Q_hat_f. Half-width
    max_{l,k} max_{p in C_{l,k}} |K_hat[l,k] - p| + sqrt(log(2/(alpha-delta)) / (2N)),
    where C_{l,k} collects the p for which n(k) K_hat[l,k] lies between the
    delta/(2K^2) and 1 - delta/(2K^2) binomial quantiles.

    With ``proof_faithful`` the half-width is instead
    ||nu' K_hat^{-1}||_1 * (confusion slack + sqrt((2/N) log(2/(alpha-delta)))),
    the bound the validity argument actually establishes. The default form
    does not scale with nu, which is conservative only for small ||nu||.

    Args:
        nu: length-K vector, nu[k-1] = nu(k).
    """
    nu = np.asarray(nu, dtype=float).ravel()
    K = nu.size
    if K < 2:
        raise DomainError("label shift needs at least two classes")
    conf = estimate_confusion(labeled, K)
    cond = np.linalg.cond(conf.matrix)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise NumericalError(
            f"confusion matrix condition number exceeds threshold {CONDITION_LIMIT:g} (got {cond:.3g})"
        )
    f = _class_codes(unlabeled.predictions, K, "unlabeled predictions")
    N = f.size
    q_hat_f = np.bincount(f - 1, minlength=K) / N
    q_hat_y = np.linalg.solve(conf.matrix, q_hat_f)
    centre = float(nu @ q_hat_y)

    tail = split.delta / (2.0 * K * K)
    counts = conf.correct_counts()
    conf_slack = 0.0
    for k in range(K):
        for l in range(K):
            lo, hi = confusion_band(int(counts[l, k]), int(conf.class_counts[k]), tail)
            khat = conf.matrix[l, k]
            conf_slack = max(conf_slack, float(khat - lo), float(hi - khat))
    if proof_faithful:
        freq_slack = dkwm_radius(N, split.imputed)
        scale = float(np.abs(np.linalg.solve(conf.matrix.T, nu)).sum())
        half = scale * (conf_slack + freq_slack)
    else:
        freq_slack = math.sqrt(math.log(2.0 / split.imputed) / (2.0 * N))
        half = conf_slack + freq_slack
    interval = Interval(centre - half, centre + half, 1.0 - split.alpha)
    return LabelShiftResult(interval, centre, q_hat_f, q_hat_y, conf_slack, freq_slack, conf)
