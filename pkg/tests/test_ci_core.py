import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from scipy import stats

from ppinfer.ci_core import (
    Interval,
    binomial_cdf,
    binomial_cdf_inverse,
    clt_mean_interval,
    dkwm_radius,
    finite_pop_clt_interval,
    normal_cdf,
    normal_quantile,
    sample_moments,
)
from ppinfer.errors import DomainError


def _exact_binom_cdf(k, n, p):
    p = Fraction(p)
    return float(sum(math.comb(n, i) * p**i * (1 - p) ** (n - i) for i in range(k + 1)))


def test_normal_quantile_fixtures():
    assert normal_quantile(0.5) == 0.0
    assert_allclose(normal_quantile(0.975), 1.959964, atol=1e-6)
    assert_allclose(normal_quantile(0.8413447), 1.0, atol=1e-5)


@pytest.mark.parametrize("p", [1e-8, 0.001, 0.025, 0.3, 0.9, 0.999, 1 - 1e-8])
def test_normal_quantile_matches_scipy(p):
    assert_allclose(normal_quantile(p), stats.norm.ppf(p), atol=1e-9)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_rejects_out_of_range(p):
    with pytest.raises(DomainError):
        normal_quantile(p)


@given(st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_normal_quantile_antisymmetric(p):
    assert abs(normal_quantile(p) + normal_quantile(1 - p)) < 1e-9


def test_normal_cdf_matches_scipy():
    z = np.linspace(-8, 8, 33)
    assert_allclose([normal_cdf(v) for v in z], stats.norm.cdf(z), atol=1e-14)


def test_sample_moments_population_divisor():
    m = sample_moments([0.0, 2.0])
    assert (m.n, m.mean, m.variance) == (2, 1.0, 1.0)
    with pytest.raises(DomainError):
        sample_moments([])
    with pytest.raises(DomainError):
        sample_moments([1.0, np.nan])


def test_clt_mean_interval_fixtures():
    ci = clt_mean_interval([2, 2, 2], 0.05)
    assert (ci.lower, ci.upper) == (2.0, 2.0)
    assert ci.degenerate
    ci = clt_mean_interval([0, 2], 0.05)
    assert_allclose([ci.lower, ci.upper], [-0.38595, 2.38595], atol=1e-4)
    assert ci.level == 0.95
    with pytest.raises(DomainError):
        clt_mean_interval([], 0.05)


@settings(max_examples=50)
@given(
    st.lists(st.floats(-100, 100), min_size=2, max_size=40),
    st.floats(-1e3, 1e3),
)
def test_clt_interval_shift_invariance(xs, c):
    a = clt_mean_interval(xs, 0.1)
    b = clt_mean_interval(np.array(xs) + c, 0.1)
    assert_allclose(a.width, b.width, atol=1e-7)
    assert_allclose(b.midpoint, a.midpoint + c, atol=1e-7)
    assert_allclose(a.midpoint, np.mean(xs), atol=1e-9)


def test_finite_pop_clt_fixtures():
    ci = finite_pop_clt_interval([0, 2], 4, 0.05)
    assert_allclose(ci.width / 2, 1.959964 * math.sqrt(0.5) * math.sqrt(0.5), atol=1e-6)
    assert_allclose(ci.width / 2, 0.9800, atol=1e-4)
    ci = finite_pop_clt_interval([1.0, 4.0, 2.5], 3, 0.05)
    assert ci.width == 0.0 and ci.midpoint == 2.5 and ci.degenerate
    with pytest.raises(DomainError):
        finite_pop_clt_interval([1, 2, 3], 2, 0.05)


def test_finite_pop_clt_approaches_iid_interval():
    xs = [0.3, 1.7, 2.2, -0.4, 5.0]
    iid = clt_mean_interval(xs, 0.05)
    big = finite_pop_clt_interval(xs, 10**12, 0.05)
    assert_allclose([big.lower, big.upper], [iid.lower, iid.upper], atol=1e-9)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20))
def test_finite_pop_clt_full_population_zero_width(xs):
    assert finite_pop_clt_interval(xs, len(xs), 0.05).width == 0.0


def test_binomial_cdf_fixtures():
    assert binomial_cdf(1, 2, 0.5) == pytest.approx(0.75, abs=1e-12)
    assert binomial_cdf(7, 7, 0.3) == 1.0
    assert binomial_cdf(0, 3, 0.0) == 1.0
    with pytest.raises(DomainError):
        binomial_cdf(3, 2, 0.5)


@pytest.mark.parametrize("n,p", [(10, 0.1), (25, 0.5), (40, 0.93), (60, 0.37)])
def test_binomial_cdf_matches_exact_enumeration(n, p):
    got = [binomial_cdf(k, n, p) for k in range(n + 1)]
    want = [_exact_binom_cdf(k, n, p) for k in range(n + 1)]
    assert_allclose(got, want, atol=1e-10)


def test_binomial_cdf_large_n_matches_scipy():
    n, p = 5000, 0.213
    ks = np.arange(0, n + 1, 97)
    assert_allclose([binomial_cdf(int(k), n, p) for k in ks], stats.binom.cdf(ks, n, p), atol=1e-10)


@settings(max_examples=60)
@given(st.integers(1, 60), st.floats(0, 1), st.floats(0, 1))
def test_binomial_cdf_monotone(n, p1, p2):
    lo, hi = sorted((p1, p2))
    vals = [binomial_cdf(k, n, lo) for k in range(n + 1)]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    for k in range(n):
        assert binomial_cdf(k, n, hi) <= binomial_cdf(k, n, lo) + 1e-12


def test_binomial_cdf_inverse_fixtures():
    assert binomial_cdf_inverse(0.7, 2, 0.5) == 1
    assert binomial_cdf_inverse(0.25, 2, 0.5) == 0
    assert binomial_cdf_inverse(1.0, 9, 0.4) == 9
    with pytest.raises(DomainError):
        binomial_cdf_inverse(0.0, 5, 0.5)


@settings(max_examples=60)
@given(st.integers(1, 50), st.floats(0.01, 0.99), st.data())
def test_binomial_cdf_inverse_galois(n, p, data):
    k = data.draw(st.integers(0, n))
    level = binomial_cdf(k, n, p)
    if level > 0:
        assert binomial_cdf_inverse(level, n, p) <= k


def test_dkwm_radius_fixtures():
    assert_allclose(dkwm_radius(2, 2 / math.e**2), math.sqrt(2), atol=1e-12)
    assert_allclose(dkwm_radius(200, 0.05), 0.19208, atol=1e-4)
    radii = [dkwm_radius(n, 0.05) for n in (1, 10, 100, 10**4, 10**8)]
    assert all(b < a for a, b in zip(radii, radii[1:]))
    with pytest.raises(DomainError):
        dkwm_radius(0, 0.05)


def test_interval_validation():
    with pytest.raises(DomainError):
        Interval(2.0, 1.0, 0.9)
    with pytest.raises(DomainError):
        Interval(0.0, math.inf, 0.9)
    with pytest.raises(DomainError):
        Interval(0.0, 1.0, 1.0)
    ci = Interval(0.0, math.inf, 0.9, upper_unbounded=True)
    assert ci.contains(1e300)
