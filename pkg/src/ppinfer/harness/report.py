"""Coverage reports and their serialization.

Serialized output is deterministic: floats are written with ``repr`` (the
shortest string that round-trips) and wall time is left out unless asked
for, so equal scenarios and seeds give byte-identical bytes.
"""

from __future__ import annotations

import csv
import io
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import DomainError

__all__ = ["METHODS", "FORMATS", "PLOTDATA_COLUMNS", "SUMMARY_COLUMNS", "CoverageReport", "emit_report",
           "write_report"]

METHODS = ("pp", "classical", "imputation")
FORMATS = ("text", "csv", "plotdata")
PLOTDATA_COLUMNS = ("method", "estimand", "n", "N", "trial", "lower", "upper", "width", "covered")
SUMMARY_COLUMNS = ("method", "estimand", "n", "N", "trials", "seed", "hits", "misses", "coverage",
                   "mean_width", "width_q05", "width_q50", "width_q95")
WIDTH_QUANTILES = (0.05, 0.5, 0.95)


@dataclass(frozen=True)
class CoverageReport:
    """Per-trial intervals and containment for each method.

    Arrays have shape (trials, len(methods)). Gridded sets report their hull;
    their containment allows one grid cell. An empty set counts as a miss
    with NaN endpoints and zero width.
    """

    scenario: object
    methods: tuple
    lower: np.ndarray
    upper: np.ndarray
    width: np.ndarray
    covered: np.ndarray
    wall_time: float = 0.0

    @classmethod
    def empty(cls, scenario, methods=METHODS) -> "CoverageReport":
        z = np.zeros((0, len(methods)))
        return cls(scenario, tuple(methods), z, z, z, z.astype(bool))

    @property
    def trials(self) -> int:
        return self.covered.shape[0]

    def _col(self, method) -> int:
        if method not in self.methods:
            raise DomainError(f"unknown method {method!r}; report has {self.methods}")
        return self.methods.index(method)

    def hits(self, method: str) -> int:
        return int(self.covered[:, self._col(method)].sum())

    def misses(self, method: str) -> int:
        return self.trials - self.hits(method)

    def coverage(self, method: str) -> float:
        return self.hits(method) / self.trials if self.trials else float("nan")

    def mean_width(self, method: str) -> float:
        return float(self.width[:, self._col(method)].mean()) if self.trials else float("nan")

    def width_quantiles(self, method: str) -> tuple:
        if not self.trials:
            return tuple(float("nan") for _ in WIDTH_QUANTILES)
        return tuple(float(v) for v in np.quantile(self.width[:, self._col(method)], WIDTH_QUANTILES))


def _num(x) -> str:
    return repr(float(x))


def _echo(report):
    sc = report.scenario
    if sc is None:
        return "", "", "", ""
    return sc.estimand.kind, str(sc.n), str(sc.N), str(sc.seed)


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _plotdata(report: CoverageReport) -> bytes:
    kind, n, N, _ = _echo(report)
    rows = []
    for t in range(report.trials):
        for j, m in enumerate(report.methods):
            rows.append([m, kind, n, N, t, _num(report.lower[t, j]), _num(report.upper[t, j]),
                         _num(report.width[t, j]), int(report.covered[t, j])])
    return _csv_bytes(PLOTDATA_COLUMNS, rows)


def _summary_csv(report: CoverageReport) -> bytes:
    if not report.trials:
        return _csv_bytes(SUMMARY_COLUMNS, [])
    kind, n, N, seed = _echo(report)
    rows = []
    for m in report.methods:
        rows.append([m, kind, n, N, report.trials, seed, report.hits(m), report.misses(m),
                     _num(report.coverage(m)), _num(report.mean_width(m)),
                     *(_num(q) for q in report.width_quantiles(m))])
    return _csv_bytes(SUMMARY_COLUMNS, rows)


def _text(report: CoverageReport, timing: bool) -> bytes:
    lines = []
    if report.scenario is not None:
        lines.append(f"scenario: {report.scenario.describe()}")
        lines.append(f"truth: {report.scenario.truth!r}")
    lines.append(f"trials: {report.trials}")
    for m in report.methods:
        q = ", ".join(f"{v:.6g}" for v in report.width_quantiles(m))
        lines.append(f"{m:<11} coverage {report.coverage(m):.4f} (hits {report.hits(m)}, misses "
                     f"{report.misses(m)})  mean width {report.mean_width(m):.6g}  width q05/q50/q95 {q}")
    if timing:
        lines.append(f"wall time: {report.wall_time:.3f} s")
    return ("\n".join(lines) + "\n").encode()


def emit_report(report: CoverageReport, fmt: str = "text", timing: bool = False) -> bytes:
    """Serialize a coverage report.

    Args:
        fmt: ``text`` (human summary), ``csv`` (one summary row per method) or
            ``plotdata`` (long format, one row per trial and method).
        timing: include wall time in the text format. Off by default because
            it breaks byte-for-byte reproducibility.
    """
    if fmt == "plotdata":
        return _plotdata(report)
    if fmt == "csv":
        return _summary_csv(report)
    if fmt == "text":
        return _text(report, timing)
    raise DomainError(f"unknown report format {fmt!r}; expected one of {FORMATS}")


def write_report(data: bytes, path: Optional[str]) -> None:
    """Write serialized bytes to ``path`` (stdout when None or '-').

    Raises:
        OSError: if the destination cannot be written.
    """
    if path in (None, "-"):
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    with open(path, "wb") as fh:
        fh.write(data)
