"""Scalar normal and truncated-normal primitives.

All routines work on the original (unstandardized) scale and take a
:class:`TruncNormParams` describing ``TN(mu, sigma**2, a, b)``. Tail
regions are handled in log space so that truncation intervals many
standard deviations away from ``mu`` stay usable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "DegenerateTruncationError",
    "TruncNormParams",
    "std_normal_cdf",
    "log_normal_mass",
    "tn_logpdf",
    "tn_sample",
    "tn_moment",
    "tn_mean",
]

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Normalizing mass below this is treated as an empty truncation region.
MIN_MASS = 1e-300
_LOG_MIN_MASS = math.log(MIN_MASS)

# Intervals whose log-density varies by less than NARROW_SPAN across them
# are integrated by Gauss-Legendre; there the closed forms cancel badly.
NARROW_SPAN = 1.0
_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


class DegenerateTruncationError(ValueError):
    """Raised when a truncation interval carries (numerically) no mass."""


@dataclass(frozen=True)
class TruncNormParams:
    mu: float
    sigma: float
    a: float = -math.inf
    b: float = math.inf

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if math.isnan(self.mu) or math.isnan(self.a) or math.isnan(self.b):
            raise ValueError("NaN in truncated-normal parameters")
        if not self.a < self.b:
            raise ValueError(f"need a < b, got a={self.a}, b={self.b}")

    @property
    def alpha(self) -> float:
        """Standardized lower bound."""
        return (self.a - self.mu) / self.sigma

    @property
    def beta(self) -> float:
        """Standardized upper bound."""
        return (self.b - self.mu) / self.sigma

    @property
    def log_mass(self) -> float:
        """log(Phi(beta) - Phi(alpha)); raises if the region is empty."""
        lm = log_normal_mass(self.alpha, self.beta)
        if lm < _LOG_MIN_MASS:
            raise DegenerateTruncationError(
                f"truncation region ({self.a}, {self.b}) has mass exp({lm:.1f}) "
                f"under N({self.mu}, {self.sigma}**2)"
            )
        return lm


def std_normal_cdf(x):
    """Standard normal CDF. NaN input raises."""
    x = np.asarray(x, dtype=float)
    if np.isnan(x).any():
        raise ValueError("std_normal_cdf: NaN input")
    out = special.ndtr(x)
    return float(out) if out.ndim == 0 else out


def log_normal_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for standardized bounds ``lo < hi``.

    Intervals in the upper half are reflected into the lower half, where
    ``log_ndtr`` keeps full relative accuracy (it switches to an
    asymptotic series deep in the tail). Vectorized over arrays.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flip = lo > 0
    lo_, hi_ = np.where(flip, -hi, lo), np.where(flip, -lo, hi)
    log_hi = special.log_ndtr(hi_)
    log_lo = special.log_ndtr(lo_)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = log_hi + np.log(-np.expm1(log_lo - log_hi))
    narrow = _is_narrow(lo, hi)
    if np.any(narrow):
        lo_n, hi_n = np.broadcast_to(lo, narrow.shape)[narrow], np.broadcast_to(hi, narrow.shape)[narrow]
        c, z, w = _narrow_rule(lo_n, hi_n)
        out = np.array(out, dtype=float, copy=True)
        out[narrow] = _log_phi(c) + np.log(w.sum(axis=-1))
    out = np.where(hi_ <= lo_, -np.inf, out)
    return float(out) if out.ndim == 0 else out


def _is_narrow(lo, hi):
    span = (hi - lo) * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    with np.errstate(invalid="ignore"):
        return np.isfinite(span) & (span <= NARROW_SPAN) & (hi > lo)


def _narrow_rule(lo, hi):
    """Gauss-Legendre nodes on ``[lo, hi]`` weighted by ``phi(z) / phi(c)``.

    ``c`` is the point of the interval closest to 0. Returns ``(c, z, w)``
    with ``sum(w) = (Phi(hi) - Phi(lo)) / phi(c)``.
    """
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    c = np.clip(0.0, lo, hi)
    half = 0.5 * (hi - lo)
    z = 0.5 * (hi + lo) + half * _GL_X
    w = half * _GL_W * np.exp(-0.5 * (z - c) * (z + c))
    return c[..., 0], z, w


def _log_phi(z):
    return -0.5 * np.square(z) - LOG_SQRT_2PI


def tn_logpdf(x, p: TruncNormParams):
    """Log density of ``TN(mu, sigma**2, a, b)``; ``-inf`` outside ``(a, b)``."""
    log_z = p.log_mass
    x = np.asarray(x, dtype=float)
    z = (x - p.mu) / p.sigma
    out = _log_phi(z) - math.log(p.sigma) - log_z
    out = np.where((x > p.a) & (x < p.b), out, -np.inf)
    return float(out) if out.ndim == 0 else out


def tn_sample(rng: np.random.Generator, p: TruncNormParams, size=None):
    """Exact draws by inverse CDF evaluated in log space.

    Regions lying above the mean are reflected so the inversion always
    runs on the lower tail, where ``log_ndtr``/``ndtri_exp`` are accurate
    even for bounds tens of standard deviations out.
    """
    p.log_mass  # validates the region
    lo, hi = p.alpha, p.beta
    flip = lo > 0
    if flip:
        lo, hi = -hi, -lo
    log_lo = special.log_ndtr(lo)
    log_hi = special.log_ndtr(hi)
    u = rng.random(size)
    # log Phi(x) = log Phi(hi) + log(r + u (1 - r)),  r = Phi(lo)/Phi(hi)
    r = math.exp(log_lo - log_hi)
    log_p = log_hi + np.log(r + u * (1.0 - r))
    z = special.ndtri_exp(log_p)
    z = np.clip(z, lo, hi)
    if flip:
        z = -z
    x = p.mu + p.sigma * z
    # keep draws strictly inside the open interval after rounding
    x = np.clip(x, np.nextafter(p.a, np.inf), np.nextafter(p.b, -np.inf))
    return float(x) if np.ndim(x) == 0 else x


def _boundary_ratio(bound: float, zb: float, log_z: float) -> float:
    """phi(zb) / Z, or 0 at an infinite bound."""
    if math.isinf(bound):
        return 0.0
    return math.exp(_log_phi(zb) - log_z)


def tn_moment(k: int, p: TruncNormParams) -> float:
    """Raw moment ``E[X**k]`` of ``TN(mu, sigma**2, a, b)``.

    Integration by parts against the normal kernel gives, with
    ``Z = Phi(beta) - Phi(alpha)`` and standardized bounds ``alpha``,
    ``beta``::

        m_k = (k-1) sigma^2 m_{k-2} + mu m_{k-1}
              - sigma [b^{k-1} phi(beta) - a^{k-1} phi(alpha)] / Z

    with ``m_0 = 1`` and ``m_{-1} = 0``. The bracket terms are dropped
    at infinite bounds and the ``phi/Z`` ratios are evaluated in log space.

    On intervals so short that the density changes by less than a factor
    ``e`` across them the two bracket terms nearly cancel; there the
    moment is computed by 32-point Gauss-Legendre quadrature instead,
    which is exact to rounding for such smooth integrands.
    """
    if k < 0 or int(k) != k:
        raise ValueError(f"moment order must be a non-negative integer, got {k}")
    log_z = p.log_mass
    if k == 0:
        return 1.0
    if _is_narrow(p.alpha, p.beta):
        _, z, w = _narrow_rule(p.alpha, p.beta)
        x = p.mu + p.sigma * z
        return float(np.sum(w * x ** k) / np.sum(w))
    ra = _boundary_ratio(p.a, p.alpha, log_z)
    rb = _boundary_ratio(p.b, p.beta, log_z)
    s2 = p.sigma * p.sigma
    m_prev2, m_prev = 0.0, 1.0  # m_{-1}, m_0
    for j in range(1, k + 1):
        bterm = (p.b ** (j - 1) * rb if rb else 0.0) - (p.a ** (j - 1) * ra if ra else 0.0)
        m = (j - 1) * s2 * m_prev2 + p.mu * m_prev - p.sigma * bterm
        m_prev2, m_prev = m_prev, m
    return m_prev


def tn_mean(p: TruncNormParams) -> float:
    return tn_moment(1, p)
