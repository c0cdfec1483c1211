"""Reference (numpy) densities used by the model and by its test oracles."""
from __future__ import annotations

import math

import numpy as np

from ..truncnorm import LOG_SQRT_2PI

__all__ = [
    "piecewise_mean",
    "longitudinal_loglik",
    "weibull_ph_logpdf",
    "weibull_ph_logsurv",
    "gnd_logpdf",
    "correlation_logprior",
    "normal_logpdf",
    "half_normal_logpdf",
]


def piecewise_mean(X, s, beta, omega, b):
    """x'beta + b0 + b1 (s - omega) 1{s <= omega} + b2 (s - omega) 1{s > omega}."""
    delta = np.asarray(s, dtype=float) - omega
    slope = np.where(delta <= 0, b[1], b[2])
    return np.asarray(X, dtype=float) @ np.atleast_1d(beta) + b[0] + slope * delta


def longitudinal_loglik(subject, omega, b, beta, sigma_y) -> float:
    if not sigma_y > 0:
        raise ValueError("sigma_y must be positive")
    mean = piecewise_mean(subject.x, subject.s, beta, omega, b)
    r = (subject.y - mean) / sigma_y
    return float(np.sum(-0.5 * r * r) - subject.n_visits * (math.log(sigma_y) + LOG_SQRT_2PI))


def weibull_ph_logpdf(t, w, gamma, eta, alpha) -> float:
    """log f(t) for h(t) = eta alpha t^(alpha-1) exp(w'gamma)."""
    if not t > 0:
        raise ValueError(f"event time must be positive, got {t}")
    if not (eta > 0 and alpha > 0):
        raise ValueError("eta and alpha must be positive")
    lp = float(np.dot(w, gamma))
    return (math.log(eta) + math.log(alpha) + (alpha - 1.0) * math.log(t) + lp
            - eta * t ** alpha * math.exp(lp))


def weibull_ph_logsurv(t, w, gamma, eta, alpha) -> float:
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    return -eta * t ** alpha * math.exp(float(np.dot(w, gamma)))


def gnd_logpdf(x, mu, alpha, beta):
    """Unnormalized generalized-normal log kernel -(|x - mu| / alpha)^beta."""
    return -(np.abs(np.asarray(x, dtype=float) - mu) / alpha) ** beta


def correlation_logprior(Gamma, eta_lkj: float) -> float:
    """Unnormalized LKJ log density (eta - 1) log det Gamma."""
    sign, logdet = np.linalg.slogdet(np.asarray(Gamma, dtype=float))
    if sign <= 0:
        raise ValueError("correlation matrix is not positive definite")
    np.linalg.cholesky(Gamma)
    return (eta_lkj - 1.0) * logdet


def normal_logpdf(x, sd):
    x = np.asarray(x, dtype=float)
    return np.sum(-0.5 * (x / sd) ** 2 - math.log(sd) - LOG_SQRT_2PI)


def half_normal_logpdf(x, scale):
    """N+(0, scale^2) density; the factor 2 is included."""
    return normal_logpdf(x, scale) + np.size(x) * math.log(2.0)
