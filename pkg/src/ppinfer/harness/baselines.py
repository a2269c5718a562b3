"""Classical and imputation baselines.

Classical inference uses the labeled outcomes only; imputation treats the
unlabeled predictions as if they were outcomes. Both reuse the
prediction-powered machinery with a rectifier that is identically zero, so
every estimand gets the same set construction and grid conventions.
"""

from __future__ import annotations

import numpy as np

from ..ci_core import Interval, clt_mean_interval
from ..datasets import EstimandSpec, LabeledSet, UnlabeledSet
from ..errors import DomainError
from ..estimators import pp_logistic, pp_ols, pp_poisson, pp_quantile

__all__ = ["BASELINE_KINDS", "classical_result", "imputation_result"]

BASELINE_KINDS = ("mean", "quantile", "logistic", "poisson", "ols")


def _zero_rectifier(values, features) -> LabeledSet:
    """Two rows whose predictions equal their outcomes, so the rectifier vanishes."""
    X = None if features is None else features[:2]
    return LabeledSet(values[:2], values[:2], X)


def _as_if_outcomes(values, features, estimand: EstimandSpec):
    """Inference treating ``values`` as outcomes observed on every row."""
    alpha = estimand.alpha
    kind = estimand.kind
    if kind == "mean":
        return clt_mean_interval(values, alpha)
    if kind not in BASELINE_KINDS:
        raise DomainError(f"no baseline for estimand {kind!r}; available: {BASELINE_KINDS}")
    if values.size < 2:
        raise DomainError("baselines need at least two rows")
    lab = _zero_rectifier(values, features)
    unl = UnlabeledSet(values, features)
    if kind == "quantile":
        return pp_quantile(lab, unl, estimand.q, alpha)
    if kind == "ols":
        return pp_ols(lab, unl, estimand.check_coordinate(unl.d), alpha)
    if kind == "logistic":
        return pp_logistic(lab, unl, alpha)
    return pp_poisson(lab, unl, alpha)


def classical_result(labeled: LabeledSet, estimand: EstimandSpec):
    """Interval or grid set from the labeled outcomes alone."""
    return _as_if_outcomes(np.asarray(labeled.outcomes), labeled.features, estimand)


def imputation_result(unlabeled: UnlabeledSet, estimand: EstimandSpec):
    """Interval or grid set treating unlabeled predictions as gold-standard outcomes."""
    return _as_if_outcomes(np.asarray(unlabeled.predictions), unlabeled.features, estimand)


def as_interval(result, coord: int = 0) -> Interval:
    """Interval view of a result: itself, or the hull of a grid set along ``coord``."""
    if isinstance(result, Interval):
        return result
    return result.interval(coord)
