import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cpjoint.truncnorm import (
    DegenerateTruncationError,
    TruncNormParams,
    log_normal_mass,
    std_normal_cdf,
    tn_logpdf,
    tn_mean,
    tn_moment,
    tn_sample,
)

from oracles import log_mass, tn_moment_quad

LOG_PHI0 = -0.5 * math.log(2 * math.pi)
INF = math.inf


def random_params(rng, n, tails=True):
    """Mixed bounds: two-sided, one-sided, far-tail and untruncated."""
    out = []
    for i in range(n):
        mu = rng.uniform(-2, 2)
        sigma = rng.uniform(0.1, 2.0)
        kind = i % 5
        if kind == 0:
            a, b = sorted(mu + sigma * rng.uniform(-3, 3, 2))
        elif kind == 1:
            a, b = mu + sigma * rng.uniform(-2, 2), INF
        elif kind == 2:
            a, b = -INF, mu + sigma * rng.uniform(-2, 2)
        elif kind == 3 and tails:
            a, b = mu + 6 * sigma, INF
        else:
            a = mu + sigma * rng.uniform(3, 9)
            b = a + sigma * rng.uniform(0.2, 2.0)
        out.append(TruncNormParams(mu, sigma, a, b))
    return out


class TestStdNormalCdf:
    def test_center_and_limits(self):
        assert std_normal_cdf(0.0) == 0.5
        assert std_normal_cdf(INF) == 1.0
        assert std_normal_cdf(-INF) == 0.0

    def test_quantile_value_matches_quadrature(self):
        ref = 0.5 + integrate.quad(stats.norm.pdf, 0, 1.959963985, epsabs=1e-14)[0]
        assert std_normal_cdf(1.959963985) == pytest.approx(0.975, abs=1e-9)
        assert abs(std_normal_cdf(1.959963985) - ref) < 1e-14

    def test_nan_raises(self):
        with pytest.raises(ValueError):
            std_normal_cdf(float("nan"))

    @given(st.floats(-40, 40), st.floats(-40, 40))
    def test_monotone(self, x, y):
        lo, hi = min(x, y), max(x, y)
        assert std_normal_cdf(lo) <= std_normal_cdf(hi)


class TestLogMass:
    @pytest.mark.parametrize("lo,hi", [
        (-INF, INF), (0.0, INF), (-1.0, 2.0), (8.5, 9.0), (-9.0, -8.5), (30.0, 31.0),
        (-40.0, -39.99), (3.0, 3.0000001), (-6.0, -5.9999999), (0.1, 0.1000001),
        (-1e-9, 1e-9), (12.0, INF), (-INF, -37.0),
    ])
    def test_against_high_precision(self, lo, hi):
        got = log_normal_mass(lo, hi)
        ref = log_mass(lo, hi)
        assert abs(got - ref) <= 1e-12 * max(1.0, abs(ref))

    def test_vectorized(self):
        lo = np.array([-1.0, 8.5, 3.0])
        hi = np.array([2.0, 9.0, 3.0000001])
        got = log_normal_mass(lo, hi)
        assert got.shape == (3,)
        for g, l, h in zip(got, lo, hi):
            assert g == pytest.approx(log_normal_mass(float(l), float(h)), rel=1e-14)


class TestLogpdf:
    def test_untruncated_reduces_to_normal(self):
        assert tn_logpdf(0.0, TruncNormParams(0, 1)) == pytest.approx(LOG_PHI0, abs=1e-15)

    def test_half_normal(self):
        want = LOG_PHI0 - 0.125 - math.log(0.5)
        assert tn_logpdf(0.5, TruncNormParams(0, 1, 0, INF)) == pytest.approx(want, abs=1e-14)

    def test_matches_quadrature_normalized_density(self):
        p = TruncNormParams(0.9, 0.15, 0.0, 1.5)
        z = integrate.quad(lambda x: stats.norm.pdf(x, 0.9, 0.15), 0.0, 1.5,
                           epsabs=1e-15, epsrel=1e-13)[0]
        want = stats.norm.logpdf(1.2, 0.9, 0.15) - math.log(z)
        assert abs(tn_logpdf(1.2, p) - want) < 1e-10

    def test_outside_support(self):
        p = TruncNormParams(0.9, 0.15, 0.0, 1.5)
        assert tn_logpdf(-0.1, p) == -INF
        assert tn_logpdf(1.5, p) == -INF

    def test_integrates_to_one(self):
        rng = np.random.default_rng(1)
        for p in random_params(rng, 20):
            lo = max(p.a, p.mu - 40 * p.sigma)
            hi = min(p.b, p.mu + 40 * p.sigma)
            total = integrate.quad(lambda x: math.exp(tn_logpdf(x, p)), lo, hi,
                                   epsabs=1e-13, epsrel=1e-12, limit=200)[0]
            assert abs(total - 1.0) <= 1e-8, p

    def test_degenerate_region_raises(self):
        with pytest.raises(DegenerateTruncationError):
            tn_logpdf(50.0, TruncNormParams(0.0, 1.0, 40.0, 41.0))


class TestMoments:
    def test_order_zero(self):
        assert tn_moment(0, TruncNormParams(0.3, 2.0, -1.0, 5.0)) == 1.0

    def test_half_normal_mean(self):
        assert tn_moment(1, TruncNormParams(0, 1, 0, INF)) == pytest.approx(
            math.sqrt(2 / math.pi), rel=1e-14)

    def test_fourth_moment_against_quadrature(self):
        p = TruncNormParams(0.9, 0.15, 0.0, 1.5)
        ref = tn_moment_quad(4, 0.9, 0.15, 0.0, 1.5)
        assert tn_moment(4, p) == pytest.approx(ref, rel=1e-8)

    def test_untruncated_moments(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            mu, sigma = rng.uniform(-3, 3), rng.uniform(0.05, 3)
            p = TruncNormParams(mu, sigma)
            assert tn_moment(2, p) == pytest.approx(mu ** 2 + sigma ** 2, rel=1e-10)
            assert tn_moment(3, p) == pytest.approx(mu ** 3 + 3 * mu * sigma ** 2, rel=1e-10,
                                                    abs=1e-12)

    def test_narrow_interval_mean(self):
        # width 1e-8 at the edge of the support: the mean is the midpoint
        p = TruncNormParams(0.9, 0.15, 0.0, 1e-8)
        ref = tn_moment_quad(1, 0.9, 0.15, 0.0, 1e-8)
        assert tn_mean(p) == pytest.approx(ref, rel=1e-12)

    def test_invalid_order(self):
        with pytest.raises(ValueError):
            tn_moment(-1, TruncNormParams(0, 1))


class TestSampling:
    def test_untruncated_mean(self):
        x = tn_sample(np.random.default_rng(0), TruncNormParams(0, 1), size=10 ** 6)
        assert abs(x.mean()) < 4e-3

    def test_half_normal_mean(self):
        x = tn_sample(np.random.default_rng(1), TruncNormParams(0, 1, 0, INF), size=10 ** 6)
        m1 = tn_moment(1, TruncNormParams(0, 1, 0, INF))
        se = x.std() / math.sqrt(x.size)
        assert abs(x.mean() - m1) < 4 * se

    def test_support(self):
        x = tn_sample(np.random.default_rng(2), TruncNormParams(0.9, 0.15, 0, 1.1), size=10 ** 5)
        assert np.all((x > 0) & (x < 1.1))

    def test_far_tail_support(self):
        p = TruncNormParams(0.0, 1.0, 30.0, INF)
        x = tn_sample(np.random.default_rng(3), p, size=10 ** 4)
        assert np.all(x > 30.0)
        assert x.mean() == pytest.approx(tn_mean(p), rel=1e-3)

    def test_ks_against_cdf(self):
        rng = np.random.default_rng(4)
        for p in random_params(rng, 10):
            x = tn_sample(rng, p, size=10 ** 5)
            ref = stats.truncnorm(p.alpha, p.beta, loc=p.mu, scale=p.sigma)
            res = stats.kstest(x, ref.cdf)
            assert res.pvalue > 0.01, p

    def test_degenerate_raises(self):
        with pytest.raises(DegenerateTruncationError):
            tn_sample(np.random.default_rng(0), TruncNormParams(0.0, 1.0, -60.0, -59.0))

    def test_same_seed_same_draws(self):
        p = TruncNormParams(0.9, 0.15, 0, 1.2)
        a = tn_sample(np.random.default_rng(9), p, size=100)
        b = tn_sample(np.random.default_rng(9), p, size=100)
        assert np.array_equal(a, b)


bounded = st.floats(-8, 8)


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-3, 3), sigma=st.floats(0.05, 3), x=bounded, y=bounded)
def test_mean_lies_inside_interval(mu, sigma, x, y):
    a, b = min(x, y), max(x, y)
    if b - a < 1e-6:
        return
    p = TruncNormParams(mu, sigma, a, b)
    try:
        m = tn_mean(p)
    except DegenerateTruncationError:
        return
    assert a <= m <= b


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-3, 3), sigma=st.floats(0.05, 3), x=bounded, y=bounded)
def test_second_moment_dominates_squared_mean(mu, sigma, x, y):
    a, b = min(x, y), max(x, y)
    if b - a < 1e-6:
        return
    p = TruncNormParams(mu, sigma, a, b)
    try:
        m1, m2 = tn_moment(1, p), tn_moment(2, p)
    except DegenerateTruncationError:
        return
    assert m2 - m1 * m1 >= -1e-9 * max(1.0, m2)
