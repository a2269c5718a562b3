"""Analyze a labeled and an unlabeled CSV file with all three methods."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..ci_core import Interval
from ..datasets import EstimandSpec, Schema, load_labeled, load_unlabeled
from ..errors import DomainError
from ..estimators import GridSet, default_grid, logistic_gradient, pp_logistic, pp_mean, pp_ols, pp_poisson, pp_quantile
from ..nonasymptotic import BudgetSplit, pp_logistic_na, pp_mean_na, pp_quantile_na
from .baselines import BASELINE_KINDS, classical_result, imputation_result

__all__ = ["AnalysisReport", "run_analysis", "analyze", "emit_analysis"]

ANALYSIS_COLUMNS = ("method", "estimand", "coordinate", "lower", "upper", "width", "level", "empty")


@dataclass(frozen=True)
class AnalysisReport:
    """Prediction-powered result with the classical and imputation baselines."""

    estimand: EstimandSpec
    pp: object
    classical: object
    imputation: object
    n: int
    N: int
    notes: tuple = field(default_factory=tuple)

    def results(self):
        return (("pp", self.pp), ("classical", self.classical), ("imputation", self.imputation))


def _bound(estimand: EstimandSpec, labeled, unlabeled):
    if estimand.bounds is not None:
        return estimand.bounds
    vals = np.concatenate([labeled.outcomes, labeled.predictions, unlabeled.predictions])
    return float(max(vals.max(), 1e-12))


def _pp_result(estimand: EstimandSpec, labeled, unlabeled, nonasymptotic: bool):
    kind, alpha = estimand.kind, estimand.alpha
    if nonasymptotic:
        split = BudgetSplit(alpha, estimand.delta)
        if kind == "mean":
            return pp_mean_na(labeled, unlabeled, split, _bound(estimand, labeled, unlabeled))
        if kind == "quantile":
            return pp_quantile_na(labeled, unlabeled, estimand.q, split)
        if kind == "logistic":
            grid = default_grid(labeled, unlabeled, logistic_gradient(labeled.d), alpha)
            bounds = estimand.bounds
            if bounds is None:
                bounds = np.abs(np.vstack([labeled.require_features(), unlabeled.require_features()])).max(axis=0)
            return pp_logistic_na(labeled, unlabeled, split, grid, bounds)
        raise DomainError(f"no nonasymptotic procedure for estimand {kind!r}")
    if kind == "mean":
        return pp_mean(labeled, unlabeled, alpha)
    if kind == "quantile":
        return pp_quantile(labeled, unlabeled, estimand.q, alpha)
    if kind == "logistic":
        return pp_logistic(labeled, unlabeled, alpha)
    if kind == "poisson":
        return pp_poisson(labeled, unlabeled, alpha)
    return pp_ols(labeled, unlabeled, estimand.check_coordinate(labeled.require_features().shape[1]), alpha)


def analyze(labeled, unlabeled, estimand: EstimandSpec, nonasymptotic: bool = False) -> AnalysisReport:
    """All three methods on in-memory data.

    Baselines always use the normal approximation, also when the
    prediction-powered result is nonasymptotic.
    """
    if estimand.kind not in BASELINE_KINDS:
        raise DomainError(f"analysis supports {BASELINE_KINDS}, not {estimand.kind!r}")
    pp = _pp_result(estimand, labeled, unlabeled, nonasymptotic)
    notes = ("baselines use the normal approximation",) if nonasymptotic else ()
    return AnalysisReport(estimand, pp, classical_result(labeled, estimand), imputation_result(unlabeled, estimand),
                          labeled.n, unlabeled.N, notes)


def run_analysis(labeled_path, unlabeled_path, estimand: EstimandSpec, schema: Optional[Schema] = None,
                 nonasymptotic: bool = False) -> AnalysisReport:
    """Load both files and run :func:`analyze`."""
    return analyze(load_labeled(labeled_path, schema), load_unlabeled(unlabeled_path, schema), estimand,
                   nonasymptotic)


def _rows(report: AnalysisReport):
    rows = []
    for method, res in report.results():
        if isinstance(res, Interval):
            coord = report.estimand.coordinate or 0
            rows.append((method, coord, res))
        elif isinstance(res, GridSet):
            for j in range(res.grid.dim):
                rows.append((method, j, res.interval(j)))
        else:
            raise DomainError(f"cannot report result of type {type(res).__name__}")
    return rows


def emit_analysis(report: AnalysisReport, fmt: str = "text") -> bytes:
    """Serialize an analysis report as ``text`` or ``csv``."""
    rows = _rows(report)
    kind = report.estimand.kind
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ANALYSIS_COLUMNS)
        for method, j, iv in rows:
            w.writerow([method, kind, j, repr(iv.lower), repr(iv.upper), repr(iv.width), repr(iv.level),
                        int(iv.empty)])
        return buf.getvalue().encode()
    if fmt != "text":
        raise DomainError(f"analysis output supports text and csv, not {fmt!r}")
    lines = [f"estimand: {kind}  alpha={report.estimand.alpha}  n={report.n}  N={report.N}"]
    for method, j, iv in rows:
        flag = "  (empty set)" if iv.empty else ""
        lines.append(f"{method:<11} coord {j}: ({iv.lower:.6g}, {iv.upper:.6g})  width {iv.width:.6g}{flag}")
    lines.extend(f"note: {n}" for n in report.notes)
    return ("\n".join(lines) + "\n").encode()
