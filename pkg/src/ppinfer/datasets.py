"""Labeled and unlabeled samples, estimand descriptions, and CSV ingestion.

Files are UTF-8 CSV with a mandatory header row. By default the outcome
column is ``y``, predictions are ``yhat`` and features are ``x0 .. x{d-1}``.
A schema string such as ``"y=label,yhat=score,features=age;income"``
overrides the names.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataParseError, DomainError

__all__ = [
    "LabeledSet",
    "UnlabeledSet",
    "EstimandSpec",
    "ESTIMAND_KINDS",
    "Schema",
    "parse_schema",
    "read_table",
    "load_labeled",
    "load_unlabeled",
    "save_labeled",
    "save_unlabeled",
]


def _frozen_array(values, name, ndim) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != ndim:
        raise DomainError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains NaN or infinite entries")
    arr.flags.writeable = False
    return arr


def _check_features(features, n, what):
    if features is None:
        return None
    X = _frozen_array(features, f"{what} features", 2)
    if X.shape[0] != n:
        raise DomainError(f"{what} features have {X.shape[0]} rows, expected {n}")
    return X


@dataclass(frozen=True)
class LabeledSet:
    """Gold-standard sample: outcomes Y, predictions f(X), optional features X (n x d)."""

    outcomes: np.ndarray
    predictions: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _frozen_array(self.outcomes, "outcomes", 1)
        f = _frozen_array(self.predictions, "predictions", 1)
        if y.size == 0:
            raise DomainError("labeled set is empty")
        if f.size != y.size:
            raise DomainError(f"{y.size} outcomes but {f.size} predictions")
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "predictions", f)
        object.__setattr__(self, "features", _check_features(self.features, y.size, "labeled"))

    @property
    def n(self) -> int:
        return self.outcomes.size

    @property
    def d(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def require_features(self) -> np.ndarray:
        if self.features is None:
            raise DomainError("this estimand needs features but the labeled set has none")
        return self.features

    def subset(self, idx) -> "LabeledSet":
        X = None if self.features is None else self.features[idx]
        return LabeledSet(self.outcomes[idx], self.predictions[idx], X)


@dataclass(frozen=True)
class UnlabeledSet:
    """Predictions f(X~) on the unlabeled sample, with optional features (N x d)."""

    predictions: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        f = _frozen_array(self.predictions, "predictions", 1)
        if f.size == 0:
            raise DomainError("unlabeled set is empty")
        object.__setattr__(self, "predictions", f)
        object.__setattr__(self, "features", _check_features(self.features, f.size, "unlabeled"))

    @property
    def N(self) -> int:
        return self.predictions.size

    @property
    def d(self) -> int:
        return 0 if self.features is None else self.features.shape[1]

    def require_features(self) -> np.ndarray:
        if self.features is None:
            raise DomainError("this estimand needs features but the unlabeled set has none")
        return self.features

    def subset(self, idx) -> "UnlabeledSet":
        X = None if self.features is None else self.features[idx]
        return UnlabeledSet(self.predictions[idx], X)


ESTIMAND_KINDS = ("mean", "quantile", "logistic", "poisson", "ols", "convex", "risk", "mode", "tukey")


@dataclass(frozen=True)
class EstimandSpec:
    """Which target to estimate and with what parameters.

    Args:
        kind: one of ``ESTIMAND_KINDS``.
        alpha: error level.
        delta: budget for the rectifier in nonasymptotic procedures, in (0, alpha).
        q: quantile level for ``quantile``.
        coordinate: column index j* for ``ols`` (and the reported coordinate
            for logistic/poisson p-values).
        coordinates: coordinates of interest for logistic/poisson.
        loss: gradient handle (``convex``) or loss handle (``risk``).
        eta: neighbourhood width for ``mode``; None selects the discrete loss.
        c: scale for ``tukey``.
        bounds: per-coordinate bound B (scalar or sequence).
    """

    kind: str
    alpha: float = 0.1
    delta: Optional[float] = None
    q: Optional[float] = None
    coordinate: Optional[int] = None
    coordinates: Optional[Sequence[int]] = None
    loss: Optional[object] = None
    eta: Optional[float] = None
    c: Optional[float] = None
    bounds: Optional[object] = None

    def __post_init__(self):
        if self.kind not in ESTIMAND_KINDS:
            raise DomainError(f"unknown estimand kind {self.kind!r}; expected one of {ESTIMAND_KINDS}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.delta is not None and not 0.0 < self.delta < self.alpha:
            raise DomainError(f"delta must lie in (0, alpha={self.alpha}), got {self.delta}")
        if self.kind == "quantile" and (self.q is None or not 0.0 < self.q < 1.0):
            raise DomainError(f"quantile level q must lie in (0, 1), got {self.q}")
        if self.coordinate is not None and self.coordinate < 0:
            raise DomainError(f"coordinate must be a nonnegative index, got {self.coordinate}")
        if self.kind in ("convex", "risk") and self.loss is None:
            raise DomainError(f"estimand {self.kind!r} needs a loss handle")
        if self.kind == "mode" and self.eta is not None and self.eta <= 0:
            raise DomainError(f"mode width eta must be positive, got {self.eta}")
        if self.kind == "tukey" and (self.c is None or self.c <= 0):
            raise DomainError(f"Tukey scale c must be positive, got {self.c}")

    def check_coordinate(self, d: int) -> int:
        j = 0 if self.coordinate is None else self.coordinate
        if not 0 <= j < d:
            raise DomainError(f"coordinate {j} out of range for {d} features")
        return j


# ---------------------------------------------------------------- CSV input


@dataclass(frozen=True)
class Schema:
    """Column names for outcome, prediction and features.

    ``features=None`` means: take every column named ``x<k>`` in index order.
    """

    outcome: str = "y"
    prediction: str = "yhat"
    features: Optional[tuple] = None


_SCHEMA_KEYS = {"y": "outcome", "yhat": "prediction", "features": "features"}


def parse_schema(text: Optional[str]) -> Schema:
    """Parse ``"y=COL,yhat=COL,features=A;B"`` (any subset of keys)."""
    if not text:
        return Schema()
    kwargs = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in _SCHEMA_KEYS or not value.strip():
            raise DomainError(f"bad schema entry {part!r}; expected y=, yhat= or features=")
        if key == "features":
            kwargs["features"] = tuple(v.strip() for v in value.split(";") if v.strip())
        else:
            kwargs[_SCHEMA_KEYS[key]] = value.strip()
    return Schema(**kwargs)


def read_table(path) -> tuple:
    """Read a headered CSV into (header, rows); rows are lists of raw strings."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [row for row in reader if row]
    except FileNotFoundError:
        raise DomainError(f"file not found: {path}") from None
    if header is None:
        raise DataParseError(f"{path}: no rows")
    header = [h.strip() for h in header]
    if not rows:
        raise DataParseError(f"{path}: no rows")
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataParseError(
                f"{path}: ragged row with {len(row)} fields, header has {len(header)}", row=i
            )
    return header, rows


def column_values(path, header, rows, name, allow_blank=False) -> np.ndarray:
    """Parse one column to floats; blank cells become NaN only if ``allow_blank``."""
    try:
        j = header.index(name)
    except ValueError:
        raise DataParseError(f"{path}: missing column", column=name) from None
    out = np.empty(len(rows))
    for i, row in enumerate(rows, start=1):
        cell = row[j].strip()
        if not cell:
            if allow_blank:
                out[i - 1] = math.nan
                continue
            raise DataParseError(f"{path}: missing value", row=i, column=name)
        try:
            v = float(cell)
        except ValueError:
            raise DataParseError(f"{path}: non-numeric value {cell!r}", row=i, column=name) from None
        if not math.isfinite(v):
            raise DataParseError(f"{path}: non-finite value {cell!r}", row=i, column=name)
        out[i - 1] = v
    return out


_FEATURE = re.compile(r"x(\d+)$")


def feature_columns(header, schema: Schema) -> list:
    if schema.features is not None:
        return list(schema.features)
    found = sorted((int(m.group(1)), h) for h in header if (m := _FEATURE.match(h)))
    return [h for _, h in found]


def _features(path, header, rows, schema):
    cols = feature_columns(header, schema)
    if not cols:
        return None
    return np.column_stack([column_values(path, header, rows, c) for c in cols])


def load_labeled(path, schema: Optional[Schema] = None) -> LabeledSet:
    """Load a labeled CSV; every row needs outcome and prediction."""
    schema = schema or Schema()
    header, rows = read_table(path)
    y = column_values(path, header, rows, schema.outcome)
    f = column_values(path, header, rows, schema.prediction)
    return LabeledSet(y, f, _features(path, header, rows, schema))


def load_unlabeled(path, schema: Optional[Schema] = None) -> UnlabeledSet:
    """Load an unlabeled CSV; an outcome column, if present, is ignored."""
    schema = schema or Schema()
    header, rows = read_table(path)
    f = column_values(path, header, rows, schema.prediction)
    return UnlabeledSet(f, _features(path, header, rows, schema))


def _write(path, header, columns):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            # repr of a Python float round-trips exactly
            w.writerow([repr(float(v)) for v in row])


def save_labeled(data: LabeledSet, path) -> None:
    cols = [] if data.features is None else list(data.features.T)
    header = [f"x{k}" for k in range(data.d)] + ["y", "yhat"]
    _write(path, header, cols + [data.outcomes, data.predictions])


def save_unlabeled(data: UnlabeledSet, path) -> None:
    cols = [] if data.features is None else list(data.features.T)
    header = [f"x{k}" for k in range(data.d)] + ["yhat"]
    _write(path, header, cols + [data.predictions])
