"""Data generation for the simulation study."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..model.records import DEFAULT_TRUTH, ModelParams, SubjectRecord
from ..ptmvn import PtmvnParams, ptmvn_sample

__all__ = [
    "SimScenario",
    "SimulatedSubjects",
    "generate_dataset",
    "sample_event_times",
    "sample_visit_times",
    "tune_censoring_rate",
    "censoring_fraction",
]

MAX_VISITS = 200


@dataclass
class SimScenario:
    n: int = 100
    target_censoring: float = 0.2
    truth: ModelParams = field(default_factory=lambda: DEFAULT_TRUTH.copy())
    visit_interval: float = 0.1
    visit_jitter: float = 0.02
    replications: int = 100
    seed: int = 20240101

    def validate(self):
        if self.n < 2:
            raise ValueError("scenario n must be at least 2")
        if not 0 < self.target_censoring < 1:
            raise ValueError("target_censoring must lie in (0, 1)")
        if self.truth.gamma.size != 1 or self.truth.beta.size != 1:
            raise ValueError("the simulator uses one shared scalar covariate")
        self.truth.validate()
        return self


@dataclass
class SimulatedSubjects:
    """Generated records plus the latent truth behind them."""

    subjects: list
    t_star: np.ndarray
    omega: np.ndarray
    b: np.ndarray
    censor_rate: float

    def __iter__(self):
        return iter(self.subjects)

    def __len__(self):
        return len(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]


def sample_event_times(rng, w, truth: ModelParams):
    """Weibull PH draws by inversion of S(t) = exp(-eta t^alpha e^{w'gamma})."""
    lin = np.atleast_2d(w) @ truth.gamma if np.ndim(w) > 1 else np.asarray(w) * truth.gamma[0]
    e = rng.standard_exponential(np.shape(lin))
    return (e / (truth.eta * np.exp(lin))) ** (1.0 / truth.alpha)


def sample_visit_times(rng, t_obs, interval=0.1, jitter=0.02):
    """Scheduled visits ``|interval*j - z_j|``, ``z_j ~ N+(0, jitter^2)``, up to ``t_obs``.

    Returns ``(visits, first_scheduled)``. When no scheduled visit falls
    before ``t_obs`` the single visit ``0.1 * first_scheduled`` is used; if
    even that exceeds ``t_obs`` the visit is placed at ``0.1 * t_obs``.
    """
    visits = []
    first = None
    for j in range(1, MAX_VISITS + 1):
        s = abs(interval * j - abs(rng.normal(0.0, jitter)))
        if first is None:
            first = s
        if s > t_obs:
            break
        visits.append(s)
    visits = np.array(sorted(set(visits)))
    if visits.size == 0:
        fallback = 0.1 * first
        visits = np.array([fallback if fallback <= t_obs else 0.1 * t_obs])
    return visits, first


def generate_dataset(scn: SimScenario, censor_rate: float, rng) -> SimulatedSubjects:
    if not censor_rate > 0:
        raise ValueError("censor_rate must be positive")
    truth = scn.truth
    n = scn.n
    x = rng.binomial(1, 0.5, size=n).astype(float)
    t_star = sample_event_times(rng, x, truth)
    c = rng.standard_exponential(n) / censor_rate
    t_obs = np.minimum(t_star, c)
    event = t_star <= c
    mu, Sigma = truth.mu_r, truth.Sigma_r
    omega = np.empty(n)
    b = np.empty((n, 3))
    subjects = []
    width = len(str(n))
    for i in range(n):
        r = ptmvn_sample(rng, PtmvnParams(mu, Sigma, 0.0, t_star[i]))
        omega[i], b[i] = r[0], r[1:]
        s, _ = sample_visit_times(rng, t_obs[i], scn.visit_interval, scn.visit_jitter)
        delta = s - omega[i]
        mean = x[i] * truth.beta[0] + b[i, 0] + np.where(delta <= 0, b[i, 1], b[i, 2]) * delta
        y = mean + truth.sigma_y * rng.standard_normal(s.size)
        subjects.append(SubjectRecord(
            id=f"S{i + 1:0{width}d}", x=[x[i]], w=[x[i]], s=s, y=y,
            t_obs=t_obs[i], event=bool(event[i]),
        ))
    return SimulatedSubjects(subjects, t_star, omega, b, censor_rate)


def censoring_fraction(rate: float, t_star, e_cens) -> float:
    """Fraction censored when censoring times are ``e_cens / rate``."""
    return float(np.mean(e_cens / rate < t_star))


class CensoringBracketError(RuntimeError):
    pass


def tune_censoring_rate(scn: SimScenario, q: float, rng, n_mc: int = 100_000,
                        tol: float = 0.005, max_iter: int = 200) -> float:
    """Exponential censoring rate giving censored fraction ``q``.

    Bisection on log-rate against a Monte Carlo estimate of the censored
    fraction. The event times and unit-exponential censoring draws are
    fixed across evaluations (common random numbers), so the estimate is
    monotone in the rate.
    """
    if not 0 < q < 1:
        raise ValueError(f"target censoring fraction must lie in (0, 1), got {q}")
    x = rng.binomial(1, 0.5, size=n_mc).astype(float)
    t_star = sample_event_times(rng, x, scn.truth)
    e = rng.standard_exponential(n_mc)
    lo, hi = math.log(1e-8), math.log(1e8)
    f_lo = censoring_fraction(math.exp(lo), t_star, e)
    f_hi = censoring_fraction(math.exp(hi), t_star, e)
    if not f_lo <= q <= f_hi:
        raise CensoringBracketError(
            f"censoring fraction {q} not bracketed by rates: [{f_lo:.4f}, {f_hi:.4f}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f = censoring_fraction(math.exp(mid), t_star, e)
        if abs(f - q) <= tol and hi - lo < 1e-3:
            return math.exp(mid)
        if f < q:
            lo = mid
        else:
            hi = mid
    return math.exp(0.5 * (lo + hi))
