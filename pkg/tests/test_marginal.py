import math

import numpy as np
import pytest
from scipy import special

from cpjoint.marginal import (
    QuadratureError,
    design_z,
    expected_Z,
    marginal_cov_y_mc,
    marginal_cov_y_parts,
    marginal_mean_y,
    population_mean_changepoint,
)
from cpjoint.model import DEFAULT_TRUTH
from cpjoint.ptmvn import PtmvnParams
from cpjoint.truncnorm import TruncNormParams, tn_mean, tn_moment

from oracles import mean_and_se, simulate_trajectories

TRUTH = DEFAULT_TRUTH
S = np.round(np.arange(1, 12) * 0.1, 10)
X = np.ones((S.size, 1))


def truth_ptmvn(t_star=1.2, Sigma=None, l=0.0):
    return PtmvnParams(TRUTH.mu_r, TRUTH.Sigma_r if Sigma is None else Sigma, l, t_star)


def weibull_mean(rate, alpha):
    return rate ** (-1 / alpha) * math.gamma(1 + 1 / alpha)


class TestDesign:
    def test_rows(self):
        z = design_z([0.2, 0.5, 0.9], 0.5)
        assert np.allclose(z, [[1, -0.3, 0], [1, 0, 0], [1, 0, 0.4]])

    def test_vector_omega_shape(self):
        assert design_z(S, np.array([0.3, 0.6])).shape == (2, S.size, 3)


class TestExpectedZ:
    def test_point_mass_limit(self):
        ez, ewz = expected_Z(S, TruncNormParams(0.9, 1e-6, 0.0, 1.2))
        want = design_z(S, 0.9)
        assert np.max(np.abs(ez - want)) < 1e-4
        assert np.max(np.abs(ewz - 0.9 * want)) < 1e-4

    def test_column_sum_identity(self):
        tn = TruncNormParams(0.9, 0.15, 0.0, 1.2)
        ez, ewz = expected_Z(S, tn)
        assert np.max(np.abs(ez[:, 1] + ez[:, 2] - (S - tn_mean(tn)))) < 1e-10
        assert np.allclose(ez[:, 0], 1.0)
        assert np.allclose(ewz[:, 0], tn_mean(tn), rtol=0, atol=1e-15)

    def test_second_column_sum(self):
        # E[omega D] = s E[omega] - E[omega^2]
        tn = TruncNormParams(0.9, 0.15, 0.0, 1.2)
        _, ewz = expected_Z(S, tn)
        want = S * tn_moment(1, tn) - tn_moment(2, tn)
        assert np.max(np.abs(ewz[:, 1] + ewz[:, 2] - want)) < 1e-10

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(7)
        tn = TruncNormParams(0.9, 0.15, 0.0, 1.2)
        ez, ewz = expected_Z(S, tn)
        a, b = -0.9 / 0.15, 0.3 / 0.15
        lo, hi = special.ndtr(a), special.ndtr(b)
        for chunk in range(10):
            u = rng.uniform(lo, hi, 10 ** 6)
            om = 0.9 + 0.15 * special.ndtri(u)
            if chunk == 0:
                acc = [[] for _ in range(S.size)]
            for j, s in enumerate(S):
                d = s - om
                neg, pos = np.minimum(d, 0), np.maximum(d, 0)
                acc[j].append(np.array([
                    [neg.mean(), pos.mean(), (om * neg).mean(), (om * pos).mean()],
                    [neg.var(), pos.var(), (om * neg).var(), (om * pos).var()],
                ]))
        for j in range(S.size):
            stats_ = np.mean(acc[j], axis=0)
            mc, se = stats_[0], np.sqrt(stats_[1] / 1e7)
            got = np.array([ez[j, 1], ez[j, 2], ewz[j, 1], ewz[j, 2]])
            # at s=0.1 the positive part needs omega < 0.1, a 1e-8 event the
            # sample never sees, hence the absolute floor
            assert np.all(np.abs(got - mc) <= 4 * se + 1e-8), (j, got, mc, se)


class TestMarginalMean:
    def test_decoupled(self):
        Sigma = np.diag(TRUTH.sd_r ** 2)
        p = truth_ptmvn(Sigma=Sigma)
        ez, _ = expected_Z(S, p.omega_tn)
        want = X @ TRUTH.beta + ez @ TRUTH.mu_b
        assert np.allclose(marginal_mean_y(X, S, TRUTH.beta, p), want, rtol=0, atol=1e-14)

    def test_degenerate_random_effects(self):
        Sigma = np.diag([1e-6, 1e-8, 1e-8, 1e-8]) ** 2
        p = truth_ptmvn(Sigma=Sigma)
        want = X @ TRUTH.beta + design_z(S, TRUTH.mu_omega) @ TRUTH.mu_b
        assert np.max(np.abs(marginal_mean_y(X, S, TRUTH.beta, p) - want)) < 1e-5

    def test_against_simulation(self):
        rng = np.random.default_rng(11)
        y = simulate_trajectories(rng, X, S, TRUTH.beta, TRUTH.mu_r, TRUTH.Sigma_r, 1.2, 0.0, 10 ** 6)
        mc, se = mean_and_se(y)
        got = marginal_mean_y(X, S, TRUTH.beta, truth_ptmvn())
        assert np.all(np.abs(got - mc) <= 4 * se), np.abs(got - mc) / se

    def test_nonlinearity_in_change_point(self):
        # untruncated: averaging over omega is not plugging in its mean
        p = truth_ptmvn(t_star=math.inf, l=-math.inf)
        plug = X @ TRUTH.beta + design_z(S, TRUTH.mu_omega) @ TRUTH.mu_b
        gap = np.abs(marginal_mean_y(X, S, TRUTH.beta, p) - plug)
        assert gap.max() > 1e-3
        tiny = TRUTH.Sigma_r.copy()
        tiny[0, :] *= 1e-6
        tiny[:, 0] *= 1e-6
        q = PtmvnParams(TRUTH.mu_r, tiny, -math.inf, math.inf)
        assert np.max(np.abs(marginal_mean_y(X, S, TRUTH.beta, q) - plug)) < 1e-5

    def test_continuous_in_event_time(self):
        # pairs 1e-8 apart across the whole range, including where the
        # truncation interval becomes very narrow
        grid = np.concatenate([np.geomspace(1e-4, 0.1, 200), np.linspace(0.1, 3.0, 200)])
        h = 1e-8
        worst = 0.0
        for t in grid:
            a = marginal_mean_y(X, S, TRUTH.beta, truth_ptmvn(t))
            b = marginal_mean_y(X, S, TRUTH.beta, truth_ptmvn(t + h))
            worst = max(worst, np.max(np.abs(a - b)))
        assert worst <= 1e-6


class TestMarginalCovariance:
    def test_no_random_effects(self):
        Sigma = np.eye(4) * 1e-20
        cov = marginal_cov_y_mc(X, S, truth_ptmvn(Sigma=Sigma), 0.08, 2000,
                                np.random.default_rng(0))
        assert np.allclose(cov, 0.0064 * np.eye(S.size), rtol=0, atol=1e-12)

    def test_diagonal_dominates_noise(self):
        rng = np.random.default_rng(1)
        for t in (0.3, 0.9, 1.2, 3.0):
            cov = marginal_cov_y_mc(X, S, truth_ptmvn(t), 0.08, 2000, rng)
            assert np.all(np.diag(cov) >= 0.0064)
            assert np.min(np.linalg.eigvalsh(cov)) >= 0.0064 - 1e-10

    def test_parts_add_up(self):
        parts = marginal_cov_y_parts(X, S, truth_ptmvn(), 0.08, 5000, np.random.default_rng(2))
        assert np.allclose(parts.total, parts.noise * np.eye(S.size) + parts.conditional
                           + parts.mean_part)
        assert parts.noise == pytest.approx(0.0064)

    def test_too_few_draws(self):
        with pytest.raises(ValueError):
            marginal_cov_y_mc(X, S, truth_ptmvn(), 0.08, 999, np.random.default_rng(0))

    def test_against_simulation(self):
        rng = np.random.default_rng(3)
        n = 10 ** 6
        y = simulate_trajectories(rng, X, S, TRUTH.beta, TRUTH.mu_r, TRUTH.Sigma_r, 1.2, 0.08, n)
        c = y - y.mean(axis=0)
        emp = c.T @ c / n
        prod_sd = np.sqrt(np.maximum((c ** 2).T @ (c ** 2) / n - emp ** 2, 0))
        got = marginal_cov_y_mc(X, S, truth_ptmvn(), 0.08, n, rng)
        # both sides are Monte Carlo estimates of similar size
        se = math.sqrt(2) * prod_sd / math.sqrt(n)
        assert np.all(np.abs(got - emp) <= 4 * se), np.max(np.abs(got - emp) / se)


class TestPopulationChangePoint:
    def test_point_mass_limit(self):
        m = population_mean_changepoint(0.9, 1e-4, [0.18], 3.76, 1.88, w=[0.0])
        # most event times fall below 0.9, so only the survivors keep omega near 0.9;
        # the limit is E[min(t*, 0.9)]
        u = np.linspace(0, 1, 200001)[1:-1]
        t = (-np.log(u) / 3.76) ** (1 / 1.88)
        assert m == pytest.approx(np.minimum(t, 0.9).mean(), abs=1e-3)

    def test_interior_point_mass(self):
        # with event times far beyond mu_omega the limit is mu_omega itself
        m = population_mean_changepoint(0.9, 1e-4, [0.0], 1e-4, 1.88)
        assert m == pytest.approx(0.9, abs=1e-3)

    @pytest.mark.parametrize("t", [0.05, 0.5, 0.9, 1.2, 4.0])
    def test_single_atom(self, t):
        m = population_mean_changepoint(0.9, 0.15, event_times=[t])
        assert m == pytest.approx(tn_moment(1, TruncNormParams(0.9, 0.15, 0.0, t)), rel=1e-14)

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(5)
        mu, sd = TRUTH.mu_omega, TRUTH.sigma_omega
        vals = []
        for _ in range(10):
            t = (-np.log(rng.uniform(size=10 ** 6)) / TRUTH.eta) ** (1 / TRUTH.alpha)
            lo = special.ndtr(-mu / sd)
            hi = special.ndtr((t - mu) / sd)
            om = mu + sd * special.ndtri(lo + rng.uniform(size=t.size) * (hi - lo))
            vals.append(np.clip(om, 0, t))
        om = np.concatenate(vals)
        mc, se = mean_and_se(om)
        m = population_mean_changepoint(mu, sd, TRUTH.gamma, TRUTH.eta, TRUTH.alpha, w=[0.0])
        assert abs(m - mc) <= 4 * se, (m, mc, se)

    def test_bounded_by_mean_event_time(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            mu, sd = rng.uniform(0.2, 2.0), rng.uniform(0.05, 0.6)
            g, eta, alpha = rng.normal(0, 0.5), rng.uniform(0.3, 5), rng.uniform(0.7, 3)
            w = float(rng.integers(0, 2))
            m = population_mean_changepoint(mu, sd, [g], eta, alpha, w=[w])
            assert 0 < m <= weibull_mean(eta * math.exp(g * w), alpha)

    def test_covariate_sample_averages_rows(self):
        a = population_mean_changepoint(0.9, 0.15, [0.18], 3.76, 1.88, w=[0.0])
        b = population_mean_changepoint(0.9, 0.15, [0.18], 3.76, 1.88, w=[1.0])
        c = population_mean_changepoint(0.9, 0.15, [0.18], 3.76, 1.88,
                                        w_sample=[[0.0], [1.0], [1.0], [0.0]])
        assert c == pytest.approx(0.5 * (a + b), rel=1e-13)

    def test_nonconvergence_raises(self):
        with pytest.raises(QuadratureError):
            population_mean_changepoint(0.9, 0.15, [0.18], 3.76, 1.88, epsabs=1e-30,
                                        epsrel=0.0, limit=2)

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            population_mean_changepoint(0.9, 0.0, [0.18], 3.76, 1.88)
