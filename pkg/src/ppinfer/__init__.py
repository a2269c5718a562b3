"""Prediction-powered inference.

Confidence intervals, sets and p-values that combine a small labeled sample
with model predictions on a large unlabeled sample.
"""

from .ci_core import Interval, clt_mean_interval, finite_pop_clt_interval, normal_quantile
from .errors import ConvergenceError, DataParseError, DomainError, NumericalError, PPIError

__version__ = "0.1.0"

__all__ = [
    "Interval",
    "clt_mean_interval",
    "finite_pop_clt_interval",
    "normal_quantile",
    "PPIError",
    "DomainError",
    "DataParseError",
    "NumericalError",
    "ConvergenceError",
]
