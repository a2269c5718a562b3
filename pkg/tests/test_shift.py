import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import binom

from ppinfer.ci_core import binomial_cdf_inverse
from ppinfer.datasets import LabeledSet, UnlabeledSet
from ppinfer.errors import DomainError, NumericalError
from ppinfer.estimators import GridSpec, pp_convex, squared_gradient
from ppinfer.nonasymptotic import BudgetSplit
from ppinfer.shift import (
    WeightFunction,
    confusion_band,
    estimate_confusion,
    label_shift_interval,
    pp_convex_covshift,
)


def _grouped(rng, n, N, p_source=0.5, p_target=0.8):
    def draw(m, p):
        g = (rng.random(m) < p).astype(float)
        y = np.where(g == 1, 1.0, -1.0) + rng.normal(size=m)
        f = y + 0.3 + 0.5 * rng.normal(size=m)
        return g[:, None], y, f
    X, y, f = draw(n, p_source)
    Xt, _, ft = draw(N, p_target)
    return LabeledSet(y, f, X), UnlabeledSet(ft, Xt)


# ---------------------------------------------------------------- covariate shift


def test_weight_function_validation():
    X = np.zeros((3, 1))
    with pytest.raises(DomainError):
        WeightFunction(lambda X: np.array([1.0, -0.5, 1.0]))(X)
    with pytest.raises(DomainError):
        WeightFunction(lambda X: np.ones(2))(X)
    assert_allclose(WeightFunction.constant(2.0)(X), [2, 2, 2])
    w = WeightFunction.by_group(0, {0.0: 0.4, 1.0: 1.6})
    assert_allclose(w(np.array([[0.0], [1.0]])), [0.4, 1.6])
    with pytest.raises(DomainError):
        w(np.array([[2.0]]))


def test_unit_weights_bitwise_identical():
    rng = np.random.default_rng(0)
    lab, unl = _grouped(rng, 80, 500)
    grid = GridSpec.linspace(-1, 1.5, 101)
    base = pp_convex(lab, unl, squared_gradient(), 0.1, grid)
    for mode in ("target", "source"):
        shifted = pp_convex_covshift(lab, unl, squared_gradient(), WeightFunction.constant(1.0),
                                     0.1, grid, unlabeled_from=mode)
        np.testing.assert_array_equal(shifted.mask, base.mask)
        np.testing.assert_array_equal(shifted.statistic, base.statistic)
        np.testing.assert_array_equal(shifted.half_width, base.half_width)


def test_doubled_weights_double_both_terms():
    rng = np.random.default_rng(1)
    lab, unl = _grouped(rng, 60, 300)
    grid = GridSpec.linspace(-1, 1.5, 51)
    base = pp_convex(lab, unl, squared_gradient(), 0.1, grid)
    two = pp_convex_covshift(lab, unl, squared_gradient(), WeightFunction.constant(2.0),
                             0.1, grid, unlabeled_from="source")
    assert_allclose(two.statistic, 2 * base.statistic, rtol=1e-12, atol=1e-14)
    assert_allclose(two.half_width, 2 * base.half_width, rtol=1e-12)
    np.testing.assert_array_equal(two.mask, base.mask)


def test_covshift_requires_features_and_valid_mode():
    lab = LabeledSet([0.0, 1.0], [0.0, 1.0])
    unl = UnlabeledSet([0.5, 0.5])
    grid = GridSpec.linspace(0, 1, 5)
    with pytest.raises(DomainError):
        pp_convex_covshift(lab, unl, squared_gradient(), WeightFunction.constant(1.0), 0.1, grid)
    with pytest.raises(DomainError):
        pp_convex_covshift(lab, unl, squared_gradient(), WeightFunction.constant(1.0), 0.1, grid,
                           unlabeled_from="elsewhere")


@pytest.mark.slow
def test_two_group_weights_coverage():
    rng = np.random.default_rng(7)
    w = WeightFunction.by_group(0, {1.0: 0.8 / 0.5, 0.0: 0.2 / 0.5})
    truth = 0.8 * 1.0 + 0.2 * -1.0
    grid = GridSpec.linspace(-0.5, 1.7, 221)
    trials, hits = 200, 0
    for _ in range(trials):
        lab, unl = _grouped(rng, 200, 2000)
        gs = pp_convex_covshift(lab, unl, squared_gradient(), w, 0.1, grid)
        hits += gs.covers(truth)
    assert hits / trials >= 0.87


# ---------------------------------------------------------------- confusion


def test_confusion_identity_and_counting():
    lab = LabeledSet([1, 2, 1, 2, 3], [1, 2, 1, 2, 3])
    conf = estimate_confusion(lab)
    np.testing.assert_array_equal(conf.matrix, np.eye(3))
    np.testing.assert_array_equal(conf.class_counts, [2, 2, 1])
    flipped = estimate_confusion(LabeledSet([1, 1, 2], [1, 2, 2]))
    assert_allclose(flipped.matrix[:, 0], [0.5, 0.5])
    assert_allclose(flipped.matrix.sum(axis=0), 1.0, atol=1e-12)


def test_confusion_missing_class_named():
    with pytest.raises(DomainError, match="class 3"):
        estimate_confusion(LabeledSet([1, 2, 1], [1, 2, 3]), num_classes=3)
    with pytest.raises(DomainError):
        estimate_confusion(LabeledSet([1, 2.5], [1, 2]))


def test_confusion_columns_sum_to_one():
    rng = np.random.default_rng(3)
    y = rng.integers(1, 5, size=300).astype(float)
    f = np.where(rng.random(300) < 0.3, rng.integers(1, 5, size=300), y)
    conf = estimate_confusion(LabeledSet(y, f), 4)
    assert_allclose(conf.matrix.sum(axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("count,n,tail", [(0, 10, 0.01), (10, 10, 0.01), (7, 20, 0.0125), (225, 250, 0.00625)])
def test_confusion_band_matches_scalar_inverse(count, n, tail):
    lo, hi = confusion_band(count, n, tail)

    def member(p):
        return binomial_cdf_inverse(tail, n, p) <= count <= binomial_cdf_inverse(1 - tail, n, p)

    def member_scipy(p):
        return binom.ppf(tail, n, p) <= count <= binom.ppf(1 - tail, n, p)

    eps = 1e-9
    for check in (member, member_scipy):
        if lo > 0:
            assert not check(lo - eps) and check(lo + eps)
        if hi < 1:
            assert check(hi - eps) and not check(hi + eps)
        assert check(count / n)
    assert (lo == 0.0) == (count == 0) and (hi == 1.0) == (count == n)


# ---------------------------------------------------------------- label shift


def _label_shift_data(rng, n, N, prior_src=0.5, prior_tgt=0.7, eta=0.1):
    def draw(m, p1):
        y = np.where(rng.random(m) < p1, 1.0, 2.0)
        f = np.where(rng.random(m) < eta, 3.0 - y, y)
        return y, f
    y, f = draw(n, prior_src)
    _, ft = draw(N, prior_tgt)
    return LabeledSet(y, f), UnlabeledSet(ft)


def test_label_shift_identity_center_exact():
    y = np.array([1.0, 2.0, 3.0] * 10)
    ft = np.array([1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 1.0])
    res = label_shift_interval(LabeledSet(y, y), UnlabeledSet(ft), [0, 0, 1], BudgetSplit(0.1))
    assert res.center == res.q_hat_f[2] == 3 / 7
    assert_allclose(res.interval.midpoint, res.center)
    assert_allclose(res.q_hat_f.sum(), 1.0)
    assert_allclose(res.frequency_slack, math.sqrt(math.log(2 / 0.05) / 14))


def test_label_shift_half_width_formula():
    rng = np.random.default_rng(5)
    lab, unl = _label_shift_data(rng, 200, 1000)
    split = BudgetSplit(0.1, 0.05)
    res = label_shift_interval(lab, unl, [1, 0], split)
    tail = 0.05 / 8
    conf = res.confusion
    expected = 0.0
    for k in range(2):
        for l in range(2):
            lo, hi = confusion_band(int(round(conf.matrix[l, k] * conf.class_counts[k])),
                                    int(conf.class_counts[k]), tail)
            expected = max(expected, conf.matrix[l, k] - lo, hi - conf.matrix[l, k])
    assert_allclose(res.confusion_slack, expected)
    half = expected + math.sqrt(math.log(2 / 0.05) / 2000)
    assert_allclose(res.interval.width, 2 * half, rtol=1e-12)
    assert_allclose(res.q_hat_y.sum(), 1.0, atol=1e-12)


def test_label_shift_proof_faithful_variant():
    rng = np.random.default_rng(6)
    lab, unl = _label_shift_data(rng, 200, 1000)
    split = BudgetSplit(0.1, 0.05)
    a = label_shift_interval(lab, unl, [1, 0], split)
    b = label_shift_interval(lab, unl, [1, 0], split, proof_faithful=True)
    scale = np.abs(np.linalg.inv(a.confusion.matrix).T @ np.array([1.0, 0.0])).sum()
    assert_allclose(b.interval.width / 2, scale * (a.confusion_slack + math.sqrt(2 / 1000 * math.log(40))))
    assert b.center == a.center


def test_label_shift_nu_scaling():
    rng = np.random.default_rng(8)
    lab, unl = _label_shift_data(rng, 150, 800)
    a = label_shift_interval(lab, unl, [1, 0], BudgetSplit(0.1))
    b = label_shift_interval(lab, unl, [3, 0], BudgetSplit(0.1))
    assert_allclose(b.center, 3 * a.center)
    assert_allclose(b.interval.width, a.interval.width)


def test_label_shift_slacks_shrink_with_data():
    rng = np.random.default_rng(9)
    small = label_shift_interval(*_label_shift_data(rng, 100, 500), [1, 0], BudgetSplit(0.1))
    large = label_shift_interval(*_label_shift_data(rng, 5000, 50000), [1, 0], BudgetSplit(0.1))
    assert large.confusion_slack < small.confusion_slack
    assert large.frequency_slack < small.frequency_slack
    assert large.confusion_slack < 0.05 and large.frequency_slack < 0.01


def test_label_shift_errors():
    lab = LabeledSet([1.0, 2.0, 1.0, 2.0], [1.0, 1.0, 1.0, 1.0])
    with pytest.raises(NumericalError, match="condition number"):
        label_shift_interval(lab, UnlabeledSet([1.0, 2.0]), [1, 0], BudgetSplit(0.1))
    good = LabeledSet([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(DomainError):
        label_shift_interval(good, UnlabeledSet([1.0, 4.0]), [1, 0], BudgetSplit(0.1))
    with pytest.raises(DomainError):
        label_shift_interval(good, UnlabeledSet([1.0]), [1], BudgetSplit(0.1))


@pytest.mark.slow
def test_label_shift_coverage():
    rng = np.random.default_rng(10)
    trials, hits = 150, 0
    for _ in range(trials):
        lab, unl = _label_shift_data(rng, 500, 20000)
        hits += label_shift_interval(lab, unl, [1, 0], BudgetSplit(0.1, 0.05)).interval.contains(0.7)
    assert hits / trials >= 0.87
