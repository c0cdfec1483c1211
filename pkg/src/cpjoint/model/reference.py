"""Direct numpy evaluation of the log posterior, subject by subject.

Decodes the unconstrained vector and sums the raw densities: the full
q-dimensional PTMVN density of ``(omega, b)`` with its truncation
normalizer plus the ``log|det L22|`` Jacobian of the ``b`` map. It does
not use the standard-normal reduction of :mod:`.posterior`, which makes
it an independent check on that code path. Slow; meant for tests.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..ptmvn import PtmvnParams, ptmvn_logpdf
from .densities import (
    correlation_logprior,
    gnd_logpdf,
    half_normal_logpdf,
    longitudinal_loglik,
    normal_logpdf,
    weibull_ph_logpdf,
)


def reference_prior(params, priors, kind="joint") -> float:
    lp = normal_logpdf(params.beta, priors.beta_sd)
    lp += half_normal_logpdf(params.sigma_y, priors.sigma_y_scale)
    lp += half_normal_logpdf(params.sd_r, priors.sd_r_scale)
    for x, (loc, scale, shape) in zip(params.mu_r, priors.gnd):
        lp += gnd_logpdf(x, loc, scale, shape)
    lp += correlation_logprior(params.Gamma_r, priors.lkj_eta)
    if kind == "joint":
        lp += normal_logpdf(params.gamma, priors.gamma_sd)
        lp += half_normal_logpdf(params.eta, priors.eta_scale)
        lp += half_normal_logpdf(params.alpha, priors.alpha_scale)
    return float(lp)


def reference_logpost(model, theta) -> float:
    st = model.decode(theta)
    P = st.params
    total = st.log_jac + reference_prior(P, model.priors, model.kind)
    Sigma = P.Sigma_r
    L = np.linalg.cholesky(Sigma)
    for i, subj in enumerate(model.subjects):
        r = np.concatenate([[st.omega[i]], st.b[i]])
        if model.kind == "joint":
            total += weibull_ph_logpdf(st.t_star[i], subj.w, P.gamma, P.eta, P.alpha)
            total += ptmvn_logpdf(r, PtmvnParams(P.mu_r, Sigma, 0.0, st.t_star[i]))
            total += np.log(np.diag(L)[1:]).sum()
        else:
            total += stats.multivariate_normal(P.mu_r, Sigma).logpdf(r)
            total += np.log(np.diag(L)).sum()
        if subj.n_visits:
            total += longitudinal_loglik(subj, st.omega[i], st.b[i], P.beta, P.sigma_y)
    return float(total)
