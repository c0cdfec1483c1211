"""Unconstrained parameterization of the joint and longitudinal-only models.

The same transform code runs under numpy (reference decode/encode) and
jax.numpy (inside the differentiable log posterior); functions take the
array module as ``xp``.

Coordinates
-----------
Positive parameters are stored on the log scale. The random-effects
correlation matrix is built from canonical partial correlations
``tanh(y)`` filling its Cholesky factor row by row. Censored event times
are ``t_obs + exp(z_t)``; change points are ``t* . logistic(z_omega)``;
and ``b`` follows the non-centered map

    b = mu_b + (omega - mu_omega) / l11 * l21 + L22 z_b

with ``L`` the lower Cholesky factor of ``Sigma_r``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .records import ModelParams

N_RE = 4
N_CORR = N_RE * (N_RE - 1) // 2

__all__ = [
    "Layout",
    "DecodeError",
    "corr_cholesky",
    "corr_cholesky_inverse",
    "DecodedState",
    "decode",
    "encode",
]


class DecodeError(ValueError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} (index {index})")
        self.index = index


class Layout:
    """Named contiguous blocks of a flat unconstrained vector."""

    def __init__(self, blocks):
        self.blocks = {}
        start = 0
        for name, shape in blocks:
            shape = tuple(shape)
            size = int(np.prod(shape)) if shape else 1
            self.blocks[name] = (start, size, shape)
            start += size
        self.size = start

    def __contains__(self, name):
        return name in self.blocks

    def slice(self, name) -> slice:
        start, size, _ = self.blocks[name]
        return slice(start, start + size)

    def get(self, theta, name):
        start, size, shape = self.blocks[name]
        block = theta[start:start + size]
        return block.reshape(shape) if len(shape) != 1 else block

    def pack(self, values: dict) -> np.ndarray:
        out = np.zeros(self.size)
        for name, (start, size, _) in self.blocks.items():
            out[start:start + size] = np.asarray(values[name], dtype=float).reshape(-1)
        return out

    def coordinate_name(self, index: int) -> str:
        for name, (start, size, shape) in self.blocks.items():
            if start <= index < start + size:
                if size == 1 and not shape:
                    return name
                return f"{name}{list(np.unravel_index(index - start, shape))}"
        raise IndexError(index)


def corr_cholesky(y, xp=np, K: int = N_RE):
    """Cholesky factor of a correlation matrix from ``K(K-1)/2`` reals.

    Returns ``(L, log_jac)`` where ``log_jac`` is the log absolute
    Jacobian determinant of the map from ``y`` to the strictly-lower
    entries of ``Gamma = L L'``.
    """
    z = xp.tanh(y)
    log_jac = xp.sum(xp.log1p(-z * z))
    zero = xp.zeros(())
    one = xp.ones(())
    rows = [[one] + [zero] * (K - 1)]
    idx = 0
    for i in range(1, K):
        row = []
        ssq = zero
        for j in range(i):
            zij = z[idx]
            idx += 1
            if j == 0:
                lij = zij
            else:
                log_jac = log_jac + 0.5 * xp.log1p(-ssq)
                lij = zij * xp.sqrt(1.0 - ssq)
            row.append(lij)
            ssq = ssq + lij * lij
        lii = xp.sqrt(1.0 - ssq)
        # Cholesky -> correlation Jacobian
        log_jac = log_jac + (K - i - 1) * xp.log(lii)
        rows.append(row + [lii] + [zero] * (K - 1 - i))
    L = xp.stack([xp.stack(r) for r in rows])
    return L, log_jac


def corr_cholesky_inverse(Gamma) -> np.ndarray:
    L = np.linalg.cholesky(np.asarray(Gamma, dtype=float))
    K = L.shape[0]
    y = []
    for i in range(1, K):
        ssq = 0.0
        for j in range(i):
            z = L[i, j] / math.sqrt(1.0 - ssq)
            y.append(math.atanh(z))
            ssq += L[i, j] ** 2
    return np.array(y)


def joint_layout(p: int, q: int, n: int, n_cens: int) -> Layout:
    return Layout([
        ("gamma", (q,)), ("log_eta", ()), ("log_alpha", ()),
        ("beta", (p,)), ("log_sigma_y", ()), ("mu_omega", ()), ("mu_b", (3,)),
        ("log_sd_r", (N_RE,)), ("corr", (N_CORR,)),
        ("z_omega", (n,)), ("z_b", (n, 3)), ("z_t", (n_cens,)),
    ])


def longitudinal_layout(p: int, n: int) -> Layout:
    return Layout([
        ("beta", (p,)), ("log_sigma_y", ()), ("mu_omega", ()), ("mu_b", (3,)),
        ("log_sd_r", (N_RE,)), ("corr", (N_CORR,)),
        ("z", (n, N_RE)),
    ])


@dataclass
class DecodedState:
    params: ModelParams
    omega: np.ndarray
    b: np.ndarray
    t_star: np.ndarray
    log_jac: float


def _logistic(z):
    return special.expit(z)


def decode(theta, layout: Layout, t_obs, cens_idx, kind: str = "joint") -> DecodedState:
    """Map an unconstrained vector to parameters and per-subject latents."""
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        bad = int(np.flatnonzero(~np.isfinite(theta))[0])
        raise DecodeError("non-finite unconstrained value", bad)
    g = lambda name: layout.get(theta, name)  # noqa: E731
    L_G, jac_corr = corr_cholesky(g("corr"))
    sd = np.exp(g("log_sd_r"))
    L = sd[:, None] * L_G
    log_jac = jac_corr + g("log_sd_r").sum() + float(g("log_sigma_y"))
    t_obs = np.asarray(t_obs, dtype=float)
    if kind == "joint":
        eta = float(np.exp(g("log_eta")))
        alpha = float(np.exp(g("log_alpha")))
        log_jac += float(g("log_eta")) + float(g("log_alpha"))
        gamma = g("gamma")
        t_star = t_obs.copy()
        z_t = g("z_t")
        t_star[cens_idx] = t_obs[cens_idx] + np.exp(z_t)
        log_jac += z_t.sum()
        z_om = g("z_omega")
        sig = _logistic(z_om)
        omega = t_star * sig
        log_jac += np.sum(np.log(t_star) + np.log(sig) + np.log1p(-sig))
        dev = (omega - float(g("mu_omega"))) / L[0, 0]
        b = g("mu_b")[None, :] + dev[:, None] * L[1:, 0][None, :] + g("z_b") @ L[1:, 1:].T
    else:
        gamma = np.zeros(0)
        eta = alpha = math.nan
        t_star = np.full_like(t_obs, np.inf)
        mu = np.concatenate([np.atleast_1d(g("mu_omega")), g("mu_b")])
        r = mu[None, :] + g("z") @ L.T
        omega, b = r[:, 0], r[:, 1:]
    params = ModelParams(
        gamma=gamma, eta=eta, alpha=alpha, beta=g("beta"),
        sigma_y=float(np.exp(g("log_sigma_y"))), mu_omega=float(g("mu_omega")),
        mu_b=g("mu_b"), sd_r=sd, Gamma_r=L_G @ L_G.T,
    )
    checks = [("omega", omega), ("b", b)]
    if kind == "joint":
        checks.append(("t_star", t_star))
    for name, arr in checks:
        finite = np.isfinite(arr) if arr.ndim == 1 else np.isfinite(arr).all(axis=1)
        if not finite.all():
            raise DecodeError(f"decoded {name} is not finite for subject",
                              int(np.flatnonzero(~finite)[0]))
    return DecodedState(params, omega, b, t_star, float(log_jac))


def encode(params: ModelParams, omega, b, t_star, layout: Layout, t_obs, cens_idx,
           kind: str = "joint") -> np.ndarray:
    """Exact inverse of :func:`decode`."""
    L = np.linalg.cholesky(params.Sigma_r)
    values = {
        "beta": params.beta, "log_sigma_y": math.log(params.sigma_y),
        "mu_omega": params.mu_omega, "mu_b": params.mu_b,
        "log_sd_r": np.log(params.sd_r), "corr": corr_cholesky_inverse(params.Gamma_r),
    }
    omega = np.asarray(omega, dtype=float)
    b = np.asarray(b, dtype=float)
    if kind == "joint":
        t_star = np.asarray(t_star, dtype=float)
        t_obs = np.asarray(t_obs, dtype=float)
        values.update(
            gamma=params.gamma, log_eta=math.log(params.eta), log_alpha=math.log(params.alpha),
            z_t=np.log(t_star[cens_idx] - t_obs[cens_idx]),
            z_omega=special.logit(omega / t_star),
        )
        base = params.mu_b[None, :] + ((omega - params.mu_omega) / L[0, 0])[:, None] * L[1:, 0]
        values["z_b"] = np.linalg.solve(L[1:, 1:], (b - base).T).T
    else:
        r = np.column_stack([omega, b]) - params.mu_r[None, :]
        values["z"] = np.linalg.solve(L, r.T).T
    return layout.pack(values)
