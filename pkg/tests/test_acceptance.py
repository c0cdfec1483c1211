"""Acceptance suite: one test and one summary line per criterion.

Criteria 4 to 6 take tens of minutes to hours. Their results are cached
as JSON under ``tests/data`` keyed by the run settings. With a matching
cache they are checked on every run; otherwise they count as slow and
need ``--run-slow``. Delete the files to force a fresh run.
"""
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from cpjoint.fit import fit
from cpjoint.marginal import marginal_cov_y_mc, marginal_mean_y
from cpjoint.model import DEFAULT_TRUTH, JointModel
from cpjoint.ptmvn import (
    PtmvnParams,
    cond_b_given_omega,
    ptmvn_log_mgf,
    ptmvn_logpdf,
    ptmvn_mean,
)
from cpjoint.sampler import SamplerConfig
from cpjoint.sampler.diagnostics import split_rhat
from cpjoint.sim import SimScenario, generate_dataset, replication_study, tune_censoring_rate
from cpjoint.truncnorm import tn_logpdf, tn_moment

from oracles import rejection_ptmvn, simulate_trajectories, tn_moment_quad
from stubs import conjugate_study
from test_truncnorm import random_params

TRUTH = DEFAULT_TRUTH
DATA = Path(__file__).parent / "data"
STRUCTURAL = list(TRUTH.structural())


def _load(name, settings):
    path = DATA / name
    if path.exists():
        saved = json.loads(path.read_text())
        if saved.get("settings") == settings:
            return saved["result"]
    return None


def slow_unless_cached(name, settings):
    return (lambda f: f) if _load(name, settings) is not None else pytest.mark.slow


def _cached(name, settings, compute):
    result = _load(name, settings)
    if result is not None:
        return result
    path = DATA / name
    result = compute()
    DATA.mkdir(exist_ok=True)
    path.write_text(json.dumps({"settings": settings, "result": result}, indent=1,
                               sort_keys=True) + "\n")
    return result


def random_ptmvn(rng, q=4):
    A = rng.normal(size=(q, q))
    Sigma = A @ A.T / q + np.diag(rng.uniform(0.05, 0.5, q))
    mu = rng.normal(size=q)
    sd = math.sqrt(Sigma[0, 0])
    lo = mu[0] + sd * rng.uniform(-2.5, 1.0)
    hi = lo + sd * rng.uniform(0.3, 3.0) if rng.random() < 0.7 else math.inf
    return PtmvnParams(mu, Sigma, lo, hi)


def test_criterion_1_distribution_theory(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)

    worst_moment = 0.0
    for p in random_params(rng, 20):
        for k in range(1, 7):
            ref = tn_moment_quad(k, p.mu, p.sigma, p.a, p.b)
            worst_moment = max(worst_moment, abs(tn_moment(k, p) - ref) / abs(ref))

    worst_chain = 0.0
    for _ in range(100):
        p = random_ptmvn(rng)
        r = rejection_ptmvn(rng, p.mu, p.Sigma, p.l, p.u, 1)[0]
        cond = cond_b_given_omega(r[0], p)
        split = tn_logpdf(r[0], p.omega_tn) + stats.multivariate_normal(
            cond.mean, cond.cov).logpdf(r[1:])
        worst_chain = max(worst_chain, abs(ptmvn_logpdf(r, p) - split))

    p1 = PtmvnParams(TRUTH.mu_r, TRUTH.Sigma_r, 0.0, 1.2)
    draws = rejection_ptmvn(rng, TRUTH.mu_r, TRUTH.Sigma_r, 0.0, 1.2, 10 ** 6)
    z_mean = np.abs(ptmvn_mean(p1) - draws.mean(axis=0)) / (draws.std(axis=0) / 1e3)

    worst_mgf = 0.0
    for p in [p1] + [random_ptmvn(rng) for _ in range(20)]:
        h = 1e-5
        fd = np.empty(p.q)
        for j in range(p.q):
            e = np.zeros(p.q)
            e[j] = h
            fd[j] = (ptmvn_log_mgf(e, p) - ptmvn_log_mgf(-e, p)) / (2 * h)
        m = ptmvn_mean(p)
        worst_mgf = max(worst_mgf, np.max(np.abs(fd - m) / np.maximum(np.abs(m), 1e-300)))

    elapsed = time.perf_counter() - t0
    ok = (worst_moment <= 1e-8 and worst_chain <= 1e-12 and z_mean.max() <= 4
          and worst_mgf <= 1e-5 and elapsed <= 120)
    acceptance(1, ok, f"moment rel err {worst_moment:.1e}, chain rule {worst_chain:.1e}, "
                      f"mean max |z| {z_mean.max():.2f}, MGF rel err {worst_mgf:.1e}, "
                      f"{elapsed:.0f}s")
    assert ok


def test_criterion_2_gradient(acceptance, dataset50):
    t0 = time.perf_counter()
    m = JointModel(dataset50.subjects)
    rng = np.random.default_rng(202)
    base = m.encode(TRUTH, dataset50.omega, dataset50.b, dataset50.t_star)
    worst = 0.0
    for _ in range(20):
        theta = base + 0.3 * rng.standard_normal(m.dim)
        g = m.grad(theta)
        for j in range(m.dim):
            h = 1e-5 * max(1.0, abs(theta[j]))
            e = np.zeros(m.dim)
            e[j] = h
            fd = (m.logpost(theta + e) - m.logpost(theta - e)) / (2 * h)
            # relative to the gradient scale, floored at one for near-zero components
            worst = max(worst, abs(fd - g[j]) / max(1.0, abs(g[j])))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-5 and elapsed <= 60
    acceptance(2, ok, f"max rel err {worst:.1e} over 20 points x {m.dim} coordinates, "
                      f"{elapsed:.0f}s")
    assert ok


def test_criterion_3_marginal_moments(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    s = np.round(np.arange(1, 12) * 0.1, 10)
    X = np.ones((s.size, 1))
    n = 10 ** 6
    p = PtmvnParams(TRUTH.mu_r, TRUTH.Sigma_r, 0.0, 1.2)

    y0 = simulate_trajectories(rng, X, s, TRUTH.beta, TRUTH.mu_r, TRUTH.Sigma_r, 1.2, 0.0, n)
    z_mean = np.abs(marginal_mean_y(X, s, TRUTH.beta, p) - y0.mean(axis=0)) \
        / (y0.std(axis=0) / math.sqrt(n))

    y = simulate_trajectories(rng, X, s, TRUTH.beta, TRUTH.mu_r, TRUTH.Sigma_r, 1.2,
                              TRUTH.sigma_y, n)
    c = y - y.mean(axis=0)
    emp = c.T @ c / n
    prod_sd = np.sqrt(np.maximum((c ** 2).T @ (c ** 2) / n - emp ** 2, 0))
    got = marginal_cov_y_mc(X, s, p, TRUTH.sigma_y, n, rng)
    # both the estimate and the reference carry Monte Carlo error of similar size
    z_cov = np.abs(got - emp) / (math.sqrt(2) * prod_sd / math.sqrt(n))

    elapsed = time.perf_counter() - t0
    ok = z_mean.max() <= 4 and z_cov.max() <= 4 and elapsed <= 120
    acceptance(3, ok, f"mean max |z| {z_mean.max():.2f}, covariance max |z| "
                      f"{z_cov.max():.2f}, {elapsed:.0f}s")
    assert ok


RECOVERY = {"n": 2000, "target_censoring": 0.2, "seed": 4000, "chains": 4, "warmup": 1000,
            "samples": 1000}


def _recovery_run():
    scn = SimScenario(n=RECOVERY["n"], target_censoring=RECOVERY["target_censoring"],
                      seed=RECOVERY["seed"])
    rate = tune_censoring_rate(scn, scn.target_censoring,
                               np.random.default_rng([RECOVERY["seed"], 1]))
    data = generate_dataset(scn, rate, np.random.default_rng(RECOVERY["seed"]))
    cfg = SamplerConfig(chains=RECOVERY["chains"], warmup=RECOVERY["warmup"],
                        samples=RECOVERY["samples"], seed=RECOVERY["seed"])
    t0 = time.perf_counter()
    post = fit(data.subjects, cfg=cfg)
    out = {"seconds": time.perf_counter() - t0, "censored": float(np.mean(
        [not s.event for s in data.subjects])), "divergences": post.total_divergences(),
        "params": {}}
    for name in STRUCTURAL:
        lo, hi = post.interval(name)
        out["params"][name] = {"mean": float(post.pooled(name).mean()), "lo": lo, "hi": hi,
                               "rhat": float(split_rhat(post.param(name)))}
    return out


@slow_unless_cached("recovery_n2000.json", RECOVERY)
def test_criterion_4_parameter_recovery(acceptance):
    res = _cached("recovery_n2000.json", RECOVERY, _recovery_run)
    truth = TRUTH.structural()
    covered = [n for n, r in res["params"].items() if r["lo"] <= truth[n] <= r["hi"]]
    missed = sorted(set(truth) - set(covered))
    rhat = max(r["rhat"] for r in res["params"].values())
    ok = len(covered) >= 11 and rhat <= 1.05
    acceptance(4, ok, f"{len(covered)}/13 intervals cover the truth"
                      f"{' (missed ' + ', '.join(missed) + ')' if missed else ''}, "
                      f"max R-hat {rhat:.3f}, {res['seconds'] / 60:.0f} min")
    assert ok


DESK = {"n": 100, "target_censoring": 0.2, "replications": 100, "seed": 20240101,
        "chains": 2, "warmup": 1000, "samples": 1000}


def _desk_run():
    scn = SimScenario(n=DESK["n"], target_censoring=DESK["target_censoring"],
                      replications=DESK["replications"], seed=DESK["seed"])
    cfg = SamplerConfig(chains=DESK["chains"], warmup=DESK["warmup"], samples=DESK["samples"])
    t0 = time.perf_counter()
    res = replication_study(scn, cfg=cfg)
    return {"seconds": time.perf_counter() - t0, "censor_rate": res.censor_rate,
            "table": res.table.to_dict()}


@pytest.fixture(scope="module")
def desk_study():
    return _cached("desk_study.json", DESK, _desk_run)


@slow_unless_cached("desk_study.json", DESK)
def test_criterion_5_desk_scale_table(acceptance, desk_study):
    joint = desk_study["table"]["metrics"]["joint"]
    b1, sy, mb0 = joint["beta[1]"], joint["sigma_y"], joint["mu_b0"]
    checks = {
        "beta bias": abs(b1["bias"] - 0.001) <= 0.03,
        "beta cover": 88 <= b1["cover"] <= 100,
        "sigma_y bias": abs(sy["bias"]) <= 0.01,
        "mu_b0 MSE": mb0["mse"] <= 0.13,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    acceptance(5, ok, f"beta[1] bias {b1['bias']:.3f} cover {b1['cover']:.1f}, sigma_y bias "
                      f"{sy['bias']:.4f}, mu_b0 MSE {mb0['mse']:.3f}"
                      f"{' (failed: ' + ', '.join(failed) + ')' if failed else ''}")
    assert ok


@slow_unless_cached("desk_study.json", DESK)
def test_criterion_6_joint_beats_baseline(acceptance, desk_study):
    m = desk_study["table"]["metrics"]
    j, lo = m["joint"]["mu_b0"], m["longitudinal-only"]["mu_b0"]
    ok = abs(lo["bias"]) > abs(j["bias"]) and lo["cover"] < j["cover"]
    acceptance(6, ok, f"mu_b0 bias {lo['bias']:.3f} (longitudinal only) vs {j['bias']:.3f} "
                      f"(joint), cover {lo['cover']:.1f} vs {j['cover']:.1f}")
    assert ok


def test_criterion_7_not_reproducible(acceptance):
    acceptance(7, True, "exact real-data posterior values need data that is not available; "
                        "substituted by criteria 4 to 6", status="N/A")


def test_criterion_8_harness_validity(acceptance):
    t0 = time.perf_counter()
    res = conjugate_study(2000, 808)
    cover = res.table.value("stub", "mu", "cover")
    elapsed = time.perf_counter() - t0
    ok = abs(cover - 95) <= 2 and elapsed <= 60
    acceptance(8, ok, f"coverage {cover:.1f}% at B=2000, {elapsed:.0f}s")
    assert ok
