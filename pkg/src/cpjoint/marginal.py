"""Marginal moments of the longitudinal outcome and the population change point.

Given the event time ``t*``, the change point ``omega`` follows a
normal truncated to ``(0, t*)`` and ``b | omega`` is normal with mean
``mu_b + s_wb (omega - mu_omega) / s_w^2`` and covariance
``Sigma_b - s_wb s_wb' / s_w^2``. The random-effects design row at visit
``s`` is ``(1, D 1{D <= 0}, D 1{D >= 0})`` with ``D = s - omega``, so
marginal moments of ``y`` need expectations of that row and of ``omega``
times it, which are truncated-normal partial moments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .ptmvn import PtmvnParams, partial_moment
from .truncnorm import (
    LOG_SQRT_2PI,
    DegenerateTruncationError,
    TruncNormParams,
    tn_mean,
    tn_sample,
)

__all__ = [
    "design_z",
    "expected_Z",
    "marginal_mean_y",
    "MarginalCovariance",
    "marginal_cov_y_parts",
    "marginal_cov_y_mc",
    "conditional_mean_changepoint",
    "population_mean_changepoint",
    "QuadratureError",
]

INF = math.inf


class QuadratureError(ArithmeticError):
    pass


def design_z(s, omega) -> np.ndarray:
    """Rows ``(1, D 1{D<=0}, D 1{D>=0})``; ``omega`` scalar or vector.

    A vector ``omega`` of length ``m`` gives an ``(m, n_i, 3)`` array.
    """
    s = np.asarray(s, dtype=float)
    om = np.asarray(omega, dtype=float)
    d = s - om[..., None] if om.ndim else s - om
    z = np.empty(d.shape + (3,))
    z[..., 0] = 1.0
    z[..., 1] = np.minimum(d, 0.0)
    z[..., 2] = np.maximum(d, 0.0)
    return z


def expected_Z(s, tn: TruncNormParams):
    """Entrywise ``E[Z]`` and ``E[omega Z]`` for ``omega ~ tn``.

    Returns two ``n_i x 3`` arrays.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n = s.shape[0]
    ez = np.empty((n, 3))
    ewz = np.empty((n, 3))
    ez[:, 0] = 1.0
    ewz[:, 0] = tn_mean(tn)
    for j, sj in enumerate(s):
        ez[j, 1] = partial_moment(0, 1, sj, -INF, 0.0, tn)
        ez[j, 2] = partial_moment(0, 1, sj, 0.0, INF, tn)
        ewz[j, 1] = partial_moment(1, 1, sj, -INF, 0.0, tn)
        ewz[j, 2] = partial_moment(1, 1, sj, 0.0, INF, tn)
    return ez, ewz


def _coupling(p: PtmvnParams):
    """``(s_w^2, s_wb)`` from the PTMVN covariance."""
    return float(p.Sigma[0, 0]), p.Sigma[0, 1:]


def marginal_mean_y(X, s, beta, ptmvn: PtmvnParams) -> np.ndarray:
    """``E[y]`` given ``t*`` (the PTMVN upper bound).

    ``X beta + E[Z] (mu_b - mu_w s_wb / s_w^2) + E[omega Z] s_wb / s_w^2``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    X = np.asarray(X, dtype=float).reshape(s.shape[0], -1)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    s2, s_wb = _coupling(ptmvn)
    ez, ewz = expected_Z(s, ptmvn.omega_tn)
    mu_b = ptmvn.mu[1:]
    return X @ beta + ez @ (mu_b - ptmvn.mu[0] / s2 * s_wb) + ewz @ (s_wb / s2)


@dataclass
class MarginalCovariance:
    """Monte Carlo decomposition of ``Cov(y | t*)``.

    ``total = sigma_y^2 I + conditional + mean_part`` where
    ``conditional = E[Z C Z']`` with ``C = Cov(b | omega)`` and
    ``mean_part = Cov(Z m(omega))`` with ``m(omega) = E[b | omega]``.
    """

    total: np.ndarray
    conditional: np.ndarray
    mean_part: np.ndarray
    noise: float
    draws: int


def marginal_cov_y_parts(X, s, ptmvn: PtmvnParams, sigma_y: float, draws: int,
                         rng) -> MarginalCovariance:
    if draws < 1000:
        raise ValueError("use at least 1000 Monte Carlo draws")
    s = np.atleast_1d(np.asarray(s, dtype=float))
    n = s.shape[0]
    s2, s_wb = _coupling(ptmvn)
    C = ptmvn.Sigma[1:, 1:] - np.outer(s_wb, s_wb) / s2
    omega = np.atleast_1d(tn_sample(rng, ptmvn.omega_tn, size=draws))
    Z = design_z(s, omega)  # (draws, n, 3)
    m = ptmvn.mu[1:] + np.outer(omega - ptmvn.mu[0], s_wb / s2)  # (draws, 3)
    ZC = Z @ C
    conditional = np.einsum("kia,kja->ij", ZC, Z) / draws
    u = np.einsum("kia,ka->ki", Z, m)
    mean_part = np.cov(u, rowvar=False, bias=True).reshape(n, n)
    noise = sigma_y * sigma_y
    total = noise * np.eye(n) + conditional + mean_part
    total = 0.5 * (total + total.T)
    return MarginalCovariance(total, conditional, mean_part, noise, draws)


def marginal_cov_y_mc(X, s, ptmvn: PtmvnParams, sigma_y: float, draws: int, rng) -> np.ndarray:
    """Total marginal covariance of ``y`` given ``t*`` by Monte Carlo over ``omega``."""
    return marginal_cov_y_parts(X, s, ptmvn, sigma_y, draws, rng).total


def conditional_mean_changepoint(t: float, mu_omega: float, sigma_omega: float) -> float:
    """``E[omega | t* = t]``: mean of ``N(mu, sigma^2)`` truncated to ``(0, t)``.

    When ``(0, t)`` lies so far below ``mu`` that its mass underflows,
    the lower bound is irrelevant and the upper-truncated mean
    ``mu - sigma phi(beta) / Phi(beta)`` is used, evaluated in log space.
    """
    p = TruncNormParams(mu_omega, sigma_omega, 0.0, t)
    try:
        return tn_mean(p)
    except DegenerateTruncationError:
        if p.beta >= 0:
            raise
        beta = p.beta
        ratio = math.exp(-0.5 * beta * beta - LOG_SQRT_2PI - float(special.log_ndtr(beta)))
        return mu_omega - sigma_omega * ratio


def _survival_inverse(u, rate, alpha):
    """Event time with survival probability ``u`` under the Weibull PH model."""
    return (-math.log(u) / rate) ** (1.0 / alpha)


def population_mean_changepoint(mu_omega: float, sigma_omega: float, gamma=None,
                                eta: float = 1.0, alpha: float = 1.0, *, w=None,
                                w_sample=None, event_times=None, event_weights=None,
                                epsabs: float = 1e-6, epsrel: float = 1e-10,
                                limit: int = 200) -> float:
    """Population mean change point ``E[ E[omega | t*] ]`` over ``t* ~ f_T``.

    The event-time integral is mapped to ``(0, 1)`` through the survival
    function, ``t = (-log u / rate)^(1/alpha)`` with
    ``rate = eta exp(w'gamma)``, so that ``f_T(t) dt = du``; the bounded
    integrand is then integrated adaptively.

    Covariates enter through a fixed vector ``w`` (default zero) or an
    empirical sample ``w_sample`` (rows averaged with equal weight).
    ``event_times`` replaces ``f_T`` by a discrete distribution on the
    given atoms (``event_weights`` default to equal).
    """
    if not sigma_omega > 0:
        raise ValueError("sigma_omega must be positive")
    if event_times is not None:
        atoms = np.atleast_1d(np.asarray(event_times, dtype=float))
        wts = (np.full(atoms.size, 1.0 / atoms.size) if event_weights is None
               else np.asarray(event_weights, dtype=float) / np.sum(event_weights))
        return float(sum(wt * conditional_mean_changepoint(t, mu_omega, sigma_omega)
                         for t, wt in zip(atoms, wts)))
    if not (eta > 0 and alpha > 0):
        raise ValueError("eta and alpha must be positive")
    gamma = np.atleast_1d(np.asarray(0.0 if gamma is None else gamma, dtype=float))
    if w_sample is not None:
        rows = np.asarray(w_sample, dtype=float).reshape(-1, gamma.size)
    else:
        rows = np.zeros((1, gamma.size)) if w is None else \
            np.asarray(w, dtype=float).reshape(1, gamma.size)
    total = 0.0
    for row in rows:
        rate = eta * math.exp(float(row @ gamma))

        def integrand(u):
            t = _survival_inverse(u, rate, alpha)
            if t <= 0.0:
                return 0.0
            if math.isinf(t):
                return mu_omega
            return conditional_mean_changepoint(t, mu_omega, sigma_omega)

        val, err, info = integrate.quad(integrand, 0.0, 1.0, epsabs=epsabs, epsrel=epsrel,
                                        limit=limit, full_output=True)[:3]
        if not math.isfinite(val) or err > epsabs:
            raise QuadratureError(
                f"quadrature did not reach tolerance {epsabs}: estimate {val}, error {err}")
        total += val
    return total / rows.shape[0]
