"""Fit the joint or longitudinal-only model with the NUTS sampler."""
from __future__ import annotations

import numpy as np

from .model.posterior import JointModel
from .model.records import PriorConfig
from .sampler.init import initialize
from .sampler import JaxDensity, PosteriorDraws, SamplerConfig, sample

__all__ = ["fit", "fit_longitudinal_only", "MODEL_KINDS", "latent_draws"]

MODEL_KINDS = {"joint": "joint", "longitudinal-only": "longitudinal", "longitudinal": "longitudinal"}


def fit(data, priors: PriorConfig | None = None, cfg: SamplerConfig | None = None,
        rng=None, *, model: str = "joint") -> PosteriorDraws:
    """Sample the posterior of one dataset.

    ``model`` is ``"joint"`` or ``"longitudinal-only"``. Chain streams
    and chain starting points derive from ``cfg.seed`` (or from ``rng``
    when it is an integer). The returned draws carry the fitted
    :class:`JointModel` as ``draws.model``.
    """
    try:
        kind = MODEL_KINDS[model]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; expected joint or longitudinal-only") from None
    cfg = (cfg or SamplerConfig()).validate()
    jm = JointModel(data, priors, kind=kind)

    def init(chain_rng):
        return initialize(None, rng=chain_rng, cfg=cfg, model=jm)

    draws = sample(JaxDensity(jm.logp_fn), init, cfg, rng, names=jm.names,
                   transform=jm.constrained_batch)
    draws.model = jm
    return draws


def fit_longitudinal_only(data, priors=None, cfg=None, rng=None) -> PosteriorDraws:
    """Fit the unbounded-random-effects model without the survival part."""
    return fit(data, priors, cfg, rng, model="longitudinal-only")


def latent_draws(draws: PosteriorDraws) -> dict:
    """Per-draw change points, event times and random effects.

    Requires a fit run with ``cfg.keep_unconstrained``. Arrays are shaped
    ``(chains, samples, subjects[, 3])``.
    """
    if draws.unconstrained is None:
        raise ValueError("fit with keep_unconstrained=True to retain latent draws")
    jm = draws.model
    c, s, d = draws.unconstrained.shape
    omega = np.empty((c, s, jm.n))
    t_star = np.empty((c, s, jm.n))
    b = np.empty((c, s, jm.n, 3))
    for i in range(c):
        for j in range(s):
            st = jm.decode(draws.unconstrained[i, j])
            omega[i, j], t_star[i, j], b[i, j] = st.omega, st.t_star, st.b
    return {"omega": omega, "t_star": t_star, "b": b}
