"""Partially truncated multivariate normal (PTMVN) distribution.

A ``q``-vector ``r = (omega, b)`` is multivariate normal with mean ``mu``
and covariance ``Sigma`` before truncation, and only its first coordinate
``omega`` is restricted to ``(l, u)``. Storage order is always omega
first; ``b`` holds the remaining ``q - 1`` coordinates.

The joint density factors as ``f(omega) f(b | omega)`` where the first
factor is a univariate truncated normal and the second is an ordinary
normal, which gives an exact direct sampler.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .truncnorm import (
    LOG_SQRT_2PI,
    TruncNormParams,
    log_normal_mass,
    tn_moment,
    tn_sample,
)

__all__ = [
    "PtmvnParams",
    "ConditionalNormal",
    "ptmvn_logpdf",
    "cond_b_given_omega",
    "cond_omega_given_b",
    "ptmvn_sample",
    "ptmvn_log_mgf",
    "ptmvn_mgf",
    "ptmvn_mean",
    "ptmvn_cov_mc",
    "partial_moment",
]

# Clamp for tiny negative eigenvalues left by rank-one downdates.
EIG_CLAMP = -1e-10


@dataclass(frozen=True)
class PtmvnParams:
    mu: np.ndarray
    Sigma: np.ndarray
    l: float = -math.inf
    u: float = math.inf
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        q = mu.shape[0]
        if Sigma.shape != (q, q):
            raise ValueError(f"Sigma must be {q}x{q}, got {Sigma.shape}")
        if not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Sigma).max())):
            raise ValueError("Sigma is not symmetric")
        try:
            chol = linalg.cholesky(Sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("Sigma is not positive definite") from exc
        if not self.l < self.u:
            raise ValueError(f"need l < u, got l={self.l}, u={self.u}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "chol", chol)
        self.omega_tn.log_mass  # raises on an empty region

    @property
    def q(self) -> int:
        return self.mu.shape[0]

    @property
    def sigma_omega(self) -> float:
        return math.sqrt(self.Sigma[0, 0])

    @property
    def lam(self) -> float:
        return (self.l - self.mu[0]) / self.sigma_omega

    @property
    def ups(self) -> float:
        return (self.u - self.mu[0]) / self.sigma_omega

    @property
    def qvec(self) -> np.ndarray:
        """First column of Sigma divided by sigma_omega."""
        return self.Sigma[:, 0] / self.sigma_omega

    @property
    def omega_tn(self) -> TruncNormParams:
        """Marginal law of omega."""
        return TruncNormParams(self.mu[0], self.sigma_omega, self.l, self.u)

    @property
    def log_mass(self) -> float:
        return log_normal_mass(self.lam, self.ups)


@dataclass(frozen=True)
class ConditionalNormal:
    mean: np.ndarray
    cov: np.ndarray


def _mvn_logpdf(x, mean, chol):
    """Normal log density given a lower Cholesky factor of the covariance."""
    dev = linalg.solve_triangular(chol, x - mean, lower=True)
    k = mean.shape[0]
    return -0.5 * dev @ dev - np.log(np.diag(chol)).sum() - k * LOG_SQRT_2PI


def ptmvn_logpdf(r, p: PtmvnParams) -> float:
    r = np.asarray(r, dtype=float)
    if not (p.l < r[0] < p.u):
        return -math.inf
    return float(_mvn_logpdf(r, p.mu, p.chol) - p.log_mass)


def _clamp_psd(cov):
    cov = 0.5 * (cov + cov.T)
    w, v = np.linalg.eigh(cov)
    if w.min() < EIG_CLAMP:
        raise ValueError(f"conditional covariance has eigenvalue {w.min():.3g}")
    if w.min() < 0:
        cov = (v * np.maximum(w, 0.0)) @ v.T
    return cov


def cond_b_given_omega(omega: float, p: PtmvnParams) -> ConditionalNormal:
    if not (p.l < omega < p.u):
        raise ValueError(f"omega={omega} outside ({p.l}, {p.u})")
    s_bw = p.Sigma[1:, 0]
    s2 = p.Sigma[0, 0]
    mean = p.mu[1:] + s_bw / s2 * (omega - p.mu[0])
    cov = p.Sigma[1:, 1:] - np.outer(s_bw, s_bw) / s2
    return ConditionalNormal(mean, _clamp_psd(cov))


def cond_omega_given_b(b, p: PtmvnParams) -> TruncNormParams:
    b = np.asarray(b, dtype=float)
    S_b = p.Sigma[1:, 1:]
    s_bw = p.Sigma[1:, 0]
    try:
        cf = linalg.cho_factor(S_b, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError("Sigma_b is singular") from exc
    w = linalg.cho_solve(cf, s_bw)
    mean = p.mu[0] + w @ (b - p.mu[1:])
    var = p.Sigma[0, 0] - w @ s_bw
    return TruncNormParams(float(mean), math.sqrt(var), p.l, p.u)


def ptmvn_sample(rng: np.random.Generator, p: PtmvnParams, size: int | None = None):
    """Direct sampler: omega from its truncated-normal marginal, then b | omega.

    Returns an array of shape ``(q,)`` or ``(size, q)``.
    """
    n = 1 if size is None else size
    omega = np.atleast_1d(tn_sample(rng, p.omega_tn, size=n))
    out = np.empty((n, p.q))
    out[:, 0] = omega
    if p.q > 1:
        s_bw = p.Sigma[1:, 0]
        s2 = p.Sigma[0, 0]
        cov = _clamp_psd(p.Sigma[1:, 1:] - np.outer(s_bw, s_bw) / s2)
        w, v = np.linalg.eigh(cov)
        root = v * np.sqrt(np.maximum(w, 0.0))
        mean = p.mu[1:] + np.outer(omega - p.mu[0], s_bw / s2)
        out[:, 1:] = mean + rng.standard_normal((n, p.q - 1)) @ root.T
    return out[0] if size is None else out


def ptmvn_log_mgf(t, p: PtmvnParams) -> float:
    """log M(t) = log C(t) - log Z + t'mu + t'Sigma t / 2."""
    t = np.asarray(t, dtype=float)
    shift = t @ p.qvec
    log_c = log_normal_mass(p.lam - shift, p.ups - shift)
    return float(log_c - p.log_mass + t @ p.mu + 0.5 * t @ p.Sigma @ t)


class MgfOverflowError(OverflowError):
    def __init__(self, log_value):
        super().__init__(f"MGF overflows double precision; log M(t) = {log_value}")
        self.log_value = log_value


def ptmvn_mgf(t, p: PtmvnParams) -> float:
    lm = ptmvn_log_mgf(t, p)
    if lm > 709.0:
        raise MgfOverflowError(lm)
    return math.exp(lm)


def ptmvn_mean(p: PtmvnParams) -> np.ndarray:
    """E[r] = mu - (phi(ups) - phi(lam)) / (Phi(ups) - Phi(lam)) * qvec."""
    log_z = p.omega_tn.log_mass

    def ratio(z):
        if math.isinf(z):
            return 0.0
        return math.exp(-0.5 * z * z - LOG_SQRT_2PI - log_z)

    return p.mu - (ratio(p.ups) - ratio(p.lam)) * p.qvec


def ptmvn_cov_mc(rng: np.random.Generator, p: PtmvnParams, draws: int = 100_000) -> np.ndarray:
    """Monte Carlo covariance of the PTMVN (no closed form is provided)."""
    x = ptmvn_sample(rng, p, size=draws)
    return np.cov(x, rowvar=False)


def partial_moment(m: int, k: int, s: float, alpha: float, beta: float,
                   tn: TruncNormParams) -> float:
    """E[omega^m * Delta^k * 1{alpha <= Delta <= beta}] with Delta = s - omega.

    ``omega ~ tn``. The event ``alpha <= Delta <= beta`` is
    ``s - beta <= omega <= s - alpha``; it is intersected with the support
    ``(tn.a, tn.b)`` and the expectation becomes a probability ratio times
    a binomial sum of truncated-normal raw moments on that intersection.
    Endpoints carry no mass, so open/closed interval sides are immaterial;
    in particular ``omega = s`` (``Delta = 0``) is a null event.
    Returns 0 when the intersection is empty.
    """
    if not alpha < beta:
        raise ValueError(f"need alpha < beta, got {alpha}, {beta}")
    lo = max(tn.a, s - beta)
    hi = min(tn.b, s - alpha)
    if not lo < hi:
        return 0.0
    log_ratio = (log_normal_mass((lo - tn.mu) / tn.sigma, (hi - tn.mu) / tn.sigma)
                 - tn.log_mass)
    if log_ratio < math.log(1e-300):
        return 0.0
    inner = TruncNormParams(tn.mu, tn.sigma, lo, hi)
    total = 0.0
    for j in range(k + 1):
        total += (special.comb(k, j, exact=True) * (-1) ** j * s ** (k - j)
                  * tn_moment(m + j, inner))
    return math.exp(log_ratio) * total
