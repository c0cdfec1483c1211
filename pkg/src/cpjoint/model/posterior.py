"""Differentiable joint log posterior (JAX) for the change-point joint model.

Each subject contributes, with ``t*`` the event time (observed for
events, latent for censored subjects)::

    log f_T(t*) + log PTMVN((omega, b) | mu_r, Sigma_r, 0, t*) + log f(y | omega, b)

plus priors and the log-Jacobians of the unconstrained map.

Reduction used for the random effects. With ``Sigma_r = L L'`` and the
non-centered map ``b = mu_b + (omega - mu_omega)/l11 * l21 + L22 z_b``,
``b | omega`` has mean ``mu_b + l21 (omega - mu_omega)/l11`` and
covariance ``L22 L22'``, so::

    log N(b | mu_{b|omega}, Sigma_{b|omega}) + log|det L22| = log N(z_b | 0, I)

Therefore the PTMVN density times the ``b`` Jacobian collapses to::

    log N(omega | mu_omega, sigma_omega^2) - log[Phi(ups_i) - Phi(lam)] + log N(z_b | 0, I)

with ``lam = -mu_omega/sigma_omega`` and ``ups_i = (t*_i - mu_omega)/sigma_omega``.
No Cholesky solve per subject is needed.
"""
from __future__ import annotations

import math

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import log_ndtr

from .records import RE_NAMES, ModelParams, PriorConfig, validate_subjects
from .transforms import (
    DecodedState,
    corr_cholesky,
    decode,
    encode,
    joint_layout,
    longitudinal_layout,
)

jax.config.update("jax_enable_x64", True)

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)

__all__ = ["JointModel", "NonFiniteLogPosterior", "log_normal_mass"]


class NonFiniteLogPosterior(FloatingPointError):
    def __init__(self, message, components=None, index=None):
        super().__init__(message)
        self.components = components
        self.index = index


def log_normal_mass(lo, hi):
    """log(Phi(hi) - Phi(lo)), reflected into the lower tail for accuracy."""
    flip = lo > 0
    lo_ = jnp.where(flip, -hi, lo)
    hi_ = jnp.where(flip, -lo, hi)
    log_hi = log_ndtr(hi_)
    log_lo = log_ndtr(lo_)
    return log_hi + jnp.log(-jnp.expm1(log_lo - log_hi))


def _log_mass_from(lam, ups):
    """log_normal_mass(lam, ups) for a scalar lower bound and vector ``ups``.

    Only one vector ``log_ndtr`` evaluation: the reflection decision
    depends on the scalar ``lam`` alone.
    """
    flip = lam > 0
    v = log_ndtr(jnp.where(flip, -ups, ups))
    c = log_ndtr(jnp.where(flip, -lam, lam))
    log_hi = jnp.where(flip, c, v)
    log_lo = jnp.where(flip, v, c)
    return log_hi + jnp.log(-jnp.expm1(log_lo - log_hi))


def _normal(x, sd):
    return jnp.sum(-0.5 * (x / sd) ** 2) - x.size * (jnp.log(sd) + LOG_SQRT_2PI)


def _half_normal(x, sd):
    return _normal(x, sd) + x.size * LOG2


def _std_normal(z):
    return -0.5 * jnp.sum(z * z) - z.size * LOG_SQRT_2PI


def _gnd(x, loc, scale, shape):
    return -(jnp.abs(x - loc) / scale) ** shape


class JointModel:
    """Log posterior over the unconstrained coordinates of one dataset.

    ``kind`` is ``"joint"`` (survival + PTMVN random effects) or
    ``"longitudinal"`` (unbounded normal random effects, no survival part).
    """

    def __init__(self, subjects, priors: PriorConfig | None = None, kind: str = "joint",
                 allow_empty: bool = False):
        if kind not in ("joint", "longitudinal"):
            raise ValueError(f"unknown model kind {kind!r}")
        self.subjects = validate_subjects(list(subjects), allow_empty=allow_empty)
        self.priors = priors or PriorConfig()
        self.kind = kind
        n = len(self.subjects)
        self.n = n
        self.p = self.subjects[0].x.shape[1]
        self.q = self.subjects[0].w.shape[0]
        self.t_obs = np.array([s.t_obs for s in self.subjects])
        self.event = np.array([s.event for s in self.subjects])
        self.cens_idx = np.flatnonzero(~self.event)
        self.W = np.array([s.w for s in self.subjects]).reshape(n, self.q)
        # visits padded to a subjects x max-visits grid; avoids gather/scatter
        counts = np.array([s.n_visits for s in self.subjects])
        self.n_obs = int(counts.sum())
        width = max(1, int(counts.max()))
        self.mask = np.arange(width)[None, :] < counts[:, None]
        self.S = np.zeros((n, width))
        self.Y = np.zeros((n, width))
        self.Xb = np.zeros((n, width, self.p))
        for i, subj in enumerate(self.subjects):
            k = subj.n_visits
            self.S[i, :k] = subj.s
            self.Y[i, :k] = subj.y
            self.Xb[i, :k] = subj.x
        if kind == "joint":
            self.layout = joint_layout(self.p, self.q, n, len(self.cens_idx))
        else:
            self.layout = longitudinal_layout(self.p, n)
        fn = self._build()
        self._components = jax.jit(fn)

        def logp(theta):
            return sum(fn(theta).values())

        def packed(theta):
            v, g = jax.value_and_grad(logp)(theta)
            return jnp.concatenate([v[None], g])

        # traceable log density, for compiled samplers
        self.logp_fn = logp
        self._logp = jax.jit(logp)
        self._packed = jax.jit(packed)
        self._constrained = jax.jit(jax.vmap(self._build_constrained()))

    # ----------------------------------------------------------- naming
    @property
    def dim(self) -> int:
        return self.layout.size

    @property
    def structural_names(self) -> list:
        names = []
        if self.kind == "joint":
            names += [f"gamma[{k + 1}]" for k in range(self.q)] + ["eta", "alpha"]
        names += [f"beta[{k + 1}]" for k in range(self.p)]
        names += ["sigma_y", "mu_omega"] + [f"mu_{n}" for n in RE_NAMES[1:]]
        names += [f"sigma_{n}" for n in RE_NAMES]
        return names

    @property
    def correlation_names(self) -> list:
        return [f"corr[{RE_NAMES[i]},{RE_NAMES[j]}]" for i in range(4) for j in range(i + 1, 4)]

    @property
    def names(self) -> list:
        return self.structural_names + self.correlation_names

    # --------------------------------------------------------- density
    def _build(self):
        layout = self.layout
        pr = self.priors
        joint = self.kind == "joint"
        Xb = jnp.asarray(self.Xb)
        S = jnp.asarray(self.S)
        Y = jnp.asarray(self.Y)
        mask = jnp.asarray(self.mask, dtype=float)
        W = jnp.asarray(self.W)
        t_obs = jnp.asarray(self.t_obs)
        cens_mask = jnp.asarray(~self.event, dtype=float)
        # position of each subject's entry in z_t (0 for events, masked out)
        cens_pos = jnp.asarray(np.maximum(np.cumsum(~self.event) - 1, 0))
        n_obs = self.n_obs
        gnd = pr.gnd

        def components(theta):
            g = lambda name: layout.get(theta, name)  # noqa: E731
            L_G, jac_corr = corr_cholesky(g("corr"), xp=jnp)
            log_sd = g("log_sd_r")
            sd = jnp.exp(log_sd)
            L = sd[:, None] * L_G
            beta = g("beta")
            log_sy = g("log_sigma_y")
            sigma_y = jnp.exp(log_sy)
            mu_om = g("mu_omega")
            mu_b = g("mu_b")
            jac = jac_corr + jnp.sum(log_sd) + log_sy
            prior = (_normal(beta, pr.beta_sd) + _half_normal(sigma_y[None], pr.sigma_y_scale)
                     + _half_normal(sd, pr.sd_r_scale))
            mus = jnp.concatenate([mu_om[None], mu_b])
            for k, (loc, scale, shape) in enumerate(gnd):
                prior = prior + _gnd(mus[k], loc, scale, shape)
            if pr.lkj_eta != 1.0:
                prior = prior + (pr.lkj_eta - 1.0) * 2.0 * jnp.sum(jnp.log(jnp.diag(L_G)))
            out = {}
            if joint:
                gamma = g("gamma")
                log_eta, log_alpha = g("log_eta"), g("log_alpha")
                eta, alpha = jnp.exp(log_eta), jnp.exp(log_alpha)
                prior = (prior + _normal(gamma, pr.gamma_sd)
                         + _half_normal(eta[None], pr.eta_scale)
                         + _half_normal(alpha[None], pr.alpha_scale))
                z_t = g("z_t")
                if z_t.shape[0]:
                    t_star = t_obs + cens_mask * jnp.exp(z_t[cens_pos])
                else:
                    t_star = t_obs
                lp = W @ gamma
                log_t = jnp.log(t_star)
                out["survival"] = jnp.sum(log_eta + log_alpha + (alpha - 1.0) * log_t + lp
                                          - eta * jnp.exp(alpha * log_t + lp))
                z_om = g("z_omega")
                omega = t_star * jax.nn.sigmoid(z_om)
                jac = (jac + log_eta + log_alpha + jnp.sum(z_t)
                       + jnp.sum(log_t + jax.nn.log_sigmoid(z_om) + jax.nn.log_sigmoid(-z_om)))
                z_b = g("z_b")
                b = (mu_b[None, :] + ((omega - mu_om) / L[0, 0])[:, None] * L[1:, 0][None, :]
                     + z_b @ L[1:, 1:].T)
                sig_om = sd[0]
                lam = -mu_om / sig_om
                ups = (t_star - mu_om) / sig_om
                dev = (omega - mu_om) / sig_om
                out["random_effects"] = (jnp.sum(-0.5 * dev * dev) - self.n * (log_sd[0] + LOG_SQRT_2PI)
                                         - jnp.sum(_log_mass_from(lam, ups)) + _std_normal(z_b))
            else:
                z = g("z")
                r = jnp.concatenate([mu_om[None], mu_b])[None, :] + z @ L.T
                omega, b = r[:, 0], r[:, 1:]
                out["random_effects"] = _std_normal(z)
            delta = S - omega[:, None]
            slope = jnp.where(delta <= 0, b[:, 1:2], b[:, 2:3])
            mean = Xb @ beta + b[:, 0:1] + slope * delta
            resid = (Y - mean) / sigma_y
            out["longitudinal"] = (-0.5 * jnp.sum(mask * resid * resid)
                                   - n_obs * (log_sy + LOG_SQRT_2PI))
            out["prior"] = prior
            out["jacobian"] = jac
            return out

        return components

    def components(self, theta) -> dict:
        return {k: float(v) for k, v in self._components(np.asarray(theta, dtype=float)).items()}

    def logpost(self, theta) -> float:
        val = float(self._logp(np.asarray(theta, dtype=float)))
        if not math.isfinite(val):
            comps = self.components(theta)
            detail = ", ".join(f"{k}={v:.6g}" for k, v in comps.items())
            raise NonFiniteLogPosterior(f"non-finite log posterior: {detail}", components=comps)
        return val

    def value_and_grad(self, theta):
        """Unchecked ``(log posterior, gradient)`` pair for the sampler."""
        out = np.asarray(self._packed(np.asarray(theta, dtype=float)))
        return float(out[0]), out[1:]

    def grad(self, theta) -> np.ndarray:
        self.logpost(theta)
        _, g = self.value_and_grad(theta)
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            i = int(bad[0])
            raise NonFiniteLogPosterior(
                f"non-finite gradient at coordinate {i} ({self.layout.coordinate_name(i)})", index=i)
        return g

    # ------------------------------------------------------ transforms
    def decode(self, theta) -> DecodedState:
        return decode(theta, self.layout, self.t_obs, self.cens_idx, kind=self.kind)

    def encode(self, params: ModelParams, omega, b, t_star=None) -> np.ndarray:
        if t_star is None:
            t_star = self.t_obs
        return encode(params, omega, b, t_star, self.layout, self.t_obs, self.cens_idx,
                      kind=self.kind)

    def _build_constrained(self):
        layout = self.layout
        joint = self.kind == "joint"
        iu = np.triu_indices(4, k=1)

        def constrained(theta):
            g = lambda name: layout.get(theta, name)  # noqa: E731
            L_G, _ = corr_cholesky(g("corr"), xp=jnp)
            parts = []
            if joint:
                parts += [g("gamma"), jnp.exp(g("log_eta"))[None], jnp.exp(g("log_alpha"))[None]]
            parts += [g("beta"), jnp.exp(g("log_sigma_y"))[None], g("mu_omega")[None], g("mu_b"),
                      jnp.exp(g("log_sd_r")), (L_G @ L_G.T)[iu]]
            return jnp.concatenate(parts)

        return constrained

    def constrained(self, theta) -> np.ndarray:
        """Named constrained values in :attr:`names` order."""
        return self.constrained_batch(np.asarray(theta)[None, :])[0]

    def constrained_batch(self, thetas) -> np.ndarray:
        return np.asarray(self._constrained(np.atleast_2d(np.asarray(thetas, dtype=float))))

    @property
    def n_globals(self) -> int:
        """Length of the leading non-latent block."""
        return self.layout.slice("corr").stop

    def latent_summary(self, theta) -> dict:
        st = self.decode(theta)
        return {"omega": st.omega, "t_star": st.t_star, "b": st.b}

