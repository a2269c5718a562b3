"""Prediction-powered confidence sets for general (possibly nonconvex) risk minimizers.

The unlabeled sample is split in two. The first half picks the imputed
minimizer; the second half evaluates the imputed risk at every candidate.
A candidate is kept when its imputed risk is within the combined rectifier
and Hoeffding slack of the imputed minimizer's risk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .betting import BettingConfig, wsr_mean_ci
from .datasets import LabeledSet, UnlabeledSet
from .errors import DomainError
from .estimators import GridSet, GridSpec
from .nonasymptotic import BudgetSplit

__all__ = [
    "LossSpec",
    "SplitPlan",
    "RiskMinResult",
    "mode_loss",
    "tukey_loss",
    "hoeffding_width",
    "default_theta_grid",
    "pp_risk_min",
    "rectifier_bounds",
]

DEFAULT_THETA_POINTS = 512
# Candidates x samples evaluated per chunk
_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True)
class LossSpec:
    """A bounded loss over a finite parameter set.

    Args:
        evaluate: ``evaluate(thetas, x, y)`` with ``thetas`` of shape (G, p),
            ``x`` of shape (n, d) or None and ``y`` of shape (n,); returns the
            (G, n) loss matrix.
        bound: B, with every loss value in [0, B].
        thetas: explicit (G, p) candidate set; None means a 1-d grid is built
            from the unlabeled predictions (see :func:`default_theta_grid`).
        name: label used in reports.
        margin: padding of the default grid beyond the prediction range.
    """

    evaluate: Callable
    bound: float
    thetas: Optional[np.ndarray] = None
    name: str = "loss"
    margin: float = 0.0
    eta: Optional[float] = None
    c: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.bound) and self.bound > 0):
            raise DomainError(f"loss bound must be finite and positive, got {self.bound}")
        if self.thetas is not None:
            t = np.array(self.thetas, dtype=float)
            if t.ndim == 1:
                t = t[:, None]
            if t.ndim != 2 or t.shape[0] == 0:
                raise DomainError("parameter set must be a nonempty list of points")
            t.flags.writeable = False
            object.__setattr__(self, "thetas", t)

    def with_thetas(self, thetas) -> "LossSpec":
        return LossSpec(self.evaluate, self.bound, thetas, self.name, self.margin, self.eta, self.c)

    def losses(self, thetas, x, y) -> np.ndarray:
        """(G, n) loss matrix, checked against [0, B]."""
        thetas = np.asarray(thetas, dtype=float)
        y = np.asarray(y, dtype=float)
        rows = max(1, _CHUNK_CELLS // max(1, y.size))
        out = np.empty((thetas.shape[0], y.size))
        for s in range(0, thetas.shape[0], rows):
            out[s:s + rows] = self.evaluate(thetas[s:s + rows], x, y)
        if not np.all(np.isfinite(out)) or out.min() < 0.0 or out.max() > self.bound:
            raise DomainError(
                f"loss {self.name!r} left [0, {self.bound}]: observed [{np.nanmin(out)}, {np.nanmax(out)}]"
            )
        return out


def mode_loss(eta: Optional[float] = None, thetas=None) -> LossSpec:
    """Loss 1{|y - theta| > eta}; ``eta=None`` gives the discrete loss 1{y != theta}.

    Points exactly eta away count as inside the neighbourhood.
    """
    if eta is None:
        def evaluate(t, x, y):
            return (y[None, :] != t[:, :1]).astype(float)
        return LossSpec(evaluate, 1.0, thetas, "mode")
    if not eta > 0:
        raise DomainError(f"mode width eta must be positive, got {eta}")

    def evaluate(t, x, y):
        return (np.abs(y[None, :] - t[:, :1]) > eta).astype(float)
    return LossSpec(evaluate, 1.0, thetas, f"mode(eta={eta})", margin=float(eta), eta=float(eta))


def tukey_loss(c: float, thetas=None) -> LossSpec:
    """Tukey biweight: (c^2/6)(1 - (1 - r^2/c^2)^3) for |r| <= c, c^2/6 beyond."""
    if not c > 0:
        raise DomainError(f"Tukey scale c must be positive, got {c}")
    cap = c * c / 6.0

    def evaluate(t, x, y):
        u = np.minimum(((y[None, :] - t[:, :1]) / c) ** 2, 1.0)
        return cap * (1.0 - (1.0 - u) ** 3)
    return LossSpec(evaluate, cap, thetas, f"tukey(c={c})", margin=float(c), c=float(c))


def hoeffding_width(bound: float, level: float, m: int) -> float:
    """One-sided deviation width B * sqrt(log(1/level) / m) for a mean of m values in [0, B]."""
    if not 0.0 < level < 1.0:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    if m < 1:
        raise DomainError("need at least one sample")
    return bound * math.sqrt(math.log(1.0 / level) / m)


@dataclass(frozen=True)
class SplitPlan:
    """Partition of the unlabeled indices into a selection half and an evaluation half."""

    first_half: np.ndarray
    second_half: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        a = np.asarray(self.first_half, dtype=int)
        b = np.asarray(self.second_half, dtype=int)
        N = a.size + b.size
        if abs(a.size - b.size) > 1 or a.size == 0 or b.size == 0:
            raise DomainError(f"halves of sizes {a.size} and {b.size} are not a balanced split")
        if not np.array_equal(np.sort(np.concatenate([a, b])), np.arange(N)):
            raise DomainError("split halves must be disjoint and cover 0..N-1")
        object.__setattr__(self, "first_half", a)
        object.__setattr__(self, "second_half", b)

    @property
    def N(self) -> int:
        return self.first_half.size + self.second_half.size

    @classmethod
    def shuffled(cls, N: int, seed: int = 0) -> "SplitPlan":
        """First floor(N/2) indices of a seeded permutation, then the rest."""
        if N < 2:
            raise DomainError("need at least two unlabeled points to split")
        perm = np.random.default_rng(seed).permutation(N)
        return cls(perm[: N // 2], perm[N // 2:], seed)


def default_theta_grid(unlabeled: UnlabeledSet, margin: float = 0.0,
                       points: int = DEFAULT_THETA_POINTS) -> np.ndarray:
    """Uniform 1-d grid over [min f - margin, max f + margin]."""
    lo = float(unlabeled.predictions.min()) - margin
    hi = float(unlabeled.predictions.max()) + margin
    if lo == hi:
        return np.array([[lo]])
    return np.linspace(lo, hi, points)[:, None]


def rectifier_bounds(diffs: np.ndarray, bound: float, err: float) -> np.ndarray:
    """Per-candidate two-sided betting bounds on the mean loss gap.

    Args:
        diffs: (G, n) values of loss(x, y) - loss(x, f(x)), in [-B, B].
        err: total error of each two-sided interval; each side holds
            with probability at least 1 - err/2.

    Returns:
        (G, 2) array of (lower, upper).
    """
    config = BettingConfig(err, -bound, bound)
    cache = {}
    out = np.empty((diffs.shape[0], 2))
    for k, row in enumerate(diffs):
        key = row.tobytes()
        if key not in cache:
            ci = wsr_mean_ci(row, config)
            cache[key] = (ci.lower, ci.upper)
        out[k] = cache[key]
    return out


@dataclass(frozen=True)
class RiskMinResult:
    """Retained candidates plus the quantities behind the retention rule."""

    set: GridSet
    tilde_index: int
    imputed_risk: np.ndarray
    rectifier: np.ndarray
    hoeffding: float
    seed: Optional[int] = None
    notes: dict = field(default_factory=dict)

    @property
    def theta_tilde(self) -> np.ndarray:
        return self.set.grid.points[self.tilde_index]

    @property
    def retained(self) -> np.ndarray:
        return self.set.retained


def pp_risk_min(labeled: LabeledSet, unlabeled: UnlabeledSet, loss: LossSpec,
                split: BudgetSplit, plan: Optional[SplitPlan] = None) -> RiskMinResult:
    """Prediction-powered confidence set for argmin_theta E[loss_theta(X, Y)].

    Keeps theta when
    L(theta) <= L(theta~) - R_l(theta) + R_u(theta~) + T_u - T_l,
    where L is the imputed risk on the evaluation half, theta~ minimizes the
    imputed risk on the selection half (ties to the lowest index), (R_l, R_u)
    is a two-sided betting interval at error delta for the loss gap and
    T_u = -T_l is the Hoeffding width at level (alpha - delta)/2.
    """
    plan = plan or SplitPlan.shuffled(unlabeled.N, 0)
    if plan.N != unlabeled.N:
        raise DomainError(f"split plan covers {plan.N} points, unlabeled set has {unlabeled.N}")
    thetas = loss.thetas if loss.thetas is not None else default_theta_grid(unlabeled, loss.margin)
    B = loss.bound
    Xu = unlabeled.features
    sel = plan.first_half
    ev = plan.second_half
    risk_sel = loss.losses(thetas, None if Xu is None else Xu[sel], unlabeled.predictions[sel]).mean(axis=1)
    tilde = int(np.argmin(risk_sel))  # argmin returns the first minimum
    L = loss.losses(thetas, None if Xu is None else Xu[ev], unlabeled.predictions[ev]).mean(axis=1)
    Xl = labeled.features
    diffs = loss.losses(thetas, Xl, labeled.outcomes) - loss.losses(thetas, Xl, labeled.predictions)
    R = rectifier_bounds(diffs, B, split.delta)
    T = hoeffding_width(B, split.imputed / 2.0, ev.size)
    mask = L <= L[tilde] - R[:, 0] + R[tilde, 1] + 2.0 * T
    grid = GridSpec.from_points(thetas)
    gs = GridSet(mask, grid, 1.0 - split.alpha, statistic=L)
    return RiskMinResult(gs, tilde, L, R, T, plan.seed)
