"""Independent reference values: mpmath quadrature and plain simulation."""
import mpmath as mp
import numpy as np

mp.mp.dps = 40


def tn_moment_quad(k, mu, sigma, a, b):
    """E[X^k] for N(mu, sigma^2) truncated to (a, b) by adaptive quadrature."""
    mu, sigma = mp.mpf(mu), mp.mpf(sigma)
    lo = -mp.inf if a == float("-inf") else mp.mpf(a)
    hi = mp.inf if b == float("inf") else mp.mpf(b)
    # split at the interval point nearest the mode to help the integrator
    c = min(max(mu, lo), hi)
    pts = [lo, hi] if c in (lo, hi) else [lo, c, hi]
    dens = lambda x: mp.npdf(x, mu, sigma)  # noqa: E731
    z = mp.quad(dens, pts)
    return float(mp.quad(lambda x: x ** k * dens(x), pts) / z)


def log_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)) for standardized bounds."""
    lo = -mp.inf if lo == float("-inf") else mp.mpf(lo)
    hi = mp.inf if hi == float("inf") else mp.mpf(hi)
    if lo > 0:
        lo, hi = -hi, -lo
    return float(mp.log(mp.ncdf(hi) - mp.ncdf(lo)))


def rejection_ptmvn(rng, mu, Sigma, lo, hi, size):
    """Draws of a normal vector with its first coordinate kept in (lo, hi) by rejection."""
    out = []
    need = size
    while need > 0:
        r = rng.multivariate_normal(mu, Sigma, size=2 * need + 100)
        r = r[(r[:, 0] > lo) & (r[:, 0] < hi)]
        out.append(r[:need])
        need -= len(out[-1])
    return np.concatenate(out)


def simulate_trajectories(rng, X, s, beta, mu, Sigma, t_star, sigma_y, size):
    """Outcome vectors ``X beta + Z(omega) b + noise`` at visit times ``s``."""
    r = rejection_ptmvn(rng, mu, Sigma, 0.0, t_star, size)
    d = np.asarray(s)[None, :] - r[:, :1]
    y = (np.asarray(X) @ np.asarray(beta))[None, :] + r[:, 1:2] \
        + np.minimum(d, 0) * r[:, 2:3] + np.maximum(d, 0) * r[:, 3:4]
    if sigma_y > 0:
        y = y + sigma_y * rng.standard_normal(y.shape)
    return y


def mean_and_se(x, axis=0):
    x = np.asarray(x)
    return x.mean(axis=axis), x.std(axis=axis) / np.sqrt(x.shape[axis])
