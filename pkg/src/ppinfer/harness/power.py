"""When do predictions help? Binary outcomes with a symmetric-error classifier.

For Y ~ Bernoulli(p) and a prediction wrong with probability eta,
Var(f - Y) = eta - eta^2 (1 - 2p)^2 while Var(Y) = p (1 - p). With far more
unlabeled than labeled data the prediction-powered width is driven by
Var(f - Y), so it beats the classical interval exactly when
Var(f - Y) < Var(Y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import DomainError

__all__ = ["PowerCheck", "power_check", "error_threshold"]


@dataclass(frozen=True)
class PowerCheck:
    pp_beats_classical: bool
    threshold: float
    rectifier_variance: float
    outcome_variance: float


def error_threshold(p: float) -> float:
    """Largest model error rate at which predictions still help.

    Smaller root of (1 - 2p)^2 eta^2 - eta + p (1 - p) = 0, written as
    2c / (1 + sqrt(1 - 4ac)) so that p = 1/2 (a = 0) needs no special case.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"outcome rate must lie in (0, 1), got {p}")
    a = (1.0 - 2.0 * p) ** 2
    c = p * (1.0 - p)
    return 2.0 * c / (1.0 + math.sqrt(1.0 - 4.0 * a * c))


def power_check(p: float, eta: float) -> PowerCheck:
    """Compare Var(f - Y) with Var(Y) in the N >> n limit.

    Args:
        p: outcome rate P(Y = 1), in (0, 1).
        eta: model error rate P(f != Y), in [0, 1).
    """
    if not 0.0 <= eta < 1.0:
        raise DomainError(f"model error rate must lie in [0, 1), got {eta}")
    threshold = error_threshold(p)
    var_rect = eta - eta * eta * (1.0 - 2.0 * p) ** 2
    var_y = p * (1.0 - p)
    return PowerCheck(var_rect < var_y, threshold, var_rect, var_y)
