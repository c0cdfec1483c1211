"""Replication studies: repeated simulate-and-fit with bias, MSE and coverage.

Each replication gets its own seed sequence spawned from the study seed,
split into a data stream and a sampler seed, so results do not depend on
execution order. Metrics are reduced over successful replications in
replication-index order.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..model.records import PriorConfig
from ..sampler.core import PosteriorDraws, SamplerConfig
from ..sampler.diagnostics import split_rhat
from .generate import SimScenario, generate_dataset, tune_censoring_rate

__all__ = [
    "METRICS_ORDER",
    "MetricsTable",
    "ReplicationError",
    "StudyResult",
    "posterior_summary",
    "run_replications",
    "replication_study",
]

log = logging.getLogger(__name__)

METRICS_ORDER = [
    "beta[1]", "sigma_y", "mu_omega", "mu_b0", "mu_b1", "mu_b2",
    "sigma_omega", "sigma_b0", "sigma_b1", "sigma_b2",
]
MAX_FAILURE_FRACTION = 0.2
RHAT_FLAG = 1.1


class ReplicationError(RuntimeError):
    pass


def posterior_summary(post, names) -> dict:
    """``{name: (mean, q2.5, q97.5)}`` from draws or a ready-made summary.

    ``post`` is either :class:`PosteriorDraws` (all chains pooled) or a
    mapping from name to ``(mean, lower, upper)``, as returned by
    analytic stub fitters.
    """
    if isinstance(post, PosteriorDraws):
        out = {}
        for n in names:
            x = post.pooled(n)
            lo, hi = np.quantile(x, [0.025, 0.975])
            out[n] = (float(x.mean()), float(lo), float(hi))
        return out
    return {n: tuple(float(v) for v in post[n]) for n in names}


def _max_rhat(post, names) -> float:
    if not isinstance(post, PosteriorDraws) or post.n_chains < 2 or post.n_samples < 50:
        return math.nan
    return max(split_rhat(post.param(n)) for n in names)


@dataclass
class MetricsTable:
    """Per-model, per-parameter bias, MSE and coverage (percent)."""

    params: list
    metrics: dict  # model -> param -> {"bias", "mse", "cover"}
    n_success: dict
    n_failed: dict
    n_rhat_flagged: dict = field(default_factory=dict)

    def value(self, model: str, param: str, metric: str) -> float:
        return self.metrics[model][param][metric]

    def to_text(self, delimiter: str = "\t", digits: int = 3) -> str:
        """Parameter rows with Bias / MSE / Cover columns for each model."""
        models = list(self.metrics)
        header = ["parameter"]
        for m in models:
            header += [f"{m}:bias", f"{m}:mse", f"{m}:cover"]
        lines = [delimiter.join(header)]
        for p in self.params:
            row = [p]
            for m in models:
                r = self.metrics[m].get(p)
                if r is None:
                    row += ["", "", ""]
                else:
                    row += [f"{r['bias']:.{digits}f}", f"{r['mse']:.{digits}f}",
                            f"{r['cover']:.1f}"]
            lines.append(delimiter.join(row))
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "params": self.params, "metrics": self.metrics, "n_success": self.n_success,
            "n_failed": self.n_failed, "n_rhat_flagged": self.n_rhat_flagged,
        }


@dataclass
class StudyResult:
    table: MetricsTable
    records: list
    censor_rate: float = math.nan


def _metrics(estimates, truth, params):
    out = {}
    for p in params:
        rows = [e[p] for e in estimates if p in e]
        if not rows:
            continue
        theta = truth[p]
        err = np.array([r[0] - theta for r in rows])
        cover = np.array([r[1] <= theta <= r[2] for r in rows])
        out[p] = {
            "bias": float(math.fsum(err) / len(err)),
            "mse": float(math.fsum(err * err) / len(err)),
            "cover": float(100.0 * cover.mean()),
        }
    return out


def run_replications(B: int, seed: int, simulate, fitters: dict, truth: dict, params,
                     workers: int = 1) -> StudyResult:
    """Generic harness behind :func:`replication_study`.

    Parameters
    ----------
    simulate : callable
        ``simulate(rng) -> data`` for one replication.
    fitters : dict
        ``name -> fitter(data, seed) -> posterior`` where the posterior is
        :class:`PosteriorDraws` or a ``{param: (mean, lo, hi)}`` mapping.
    truth : dict
        True values of ``params``.
    workers : int
        Replications run on a thread pool of this size; the reduction is
        independent of completion order.
    """
    if B < 2:
        raise ValueError("a replication study needs B >= 2")
    params = [p for p in params if p in truth]
    children = np.random.SeedSequence(seed).spawn(B)

    def one(b):
        data_seq, fit_seq = children[b].spawn(2)
        data = simulate(np.random.default_rng(data_seq))
        fit_seed = int(fit_seq.generate_state(1, np.uint32)[0])
        recs = []
        for name, fitter in fitters.items():
            rec = {"replication": b, "model": name, "seed": fit_seed, "status": "ok"}
            try:
                post = fitter(data, fit_seed)
                names = [p for p in params if not isinstance(post, PosteriorDraws)
                         or p in post.names]
                rec["estimates"] = posterior_summary(post, names)
                rec["rhat_max"] = _max_rhat(post, names)
                if isinstance(post, PosteriorDraws):
                    rec["divergences"] = post.total_divergences()
                if rec["rhat_max"] > RHAT_FLAG:
                    log.warning("replication %d (%s): max R-hat %.3f", b, name, rec["rhat_max"])
            except Exception as exc:  # a failed fit is recorded, not fatal
                rec["status"] = "failed"
                rec["error"] = f"{type(exc).__name__}: {exc}"
                log.warning("replication %d (%s) failed: %s", b, name, rec["error"])
            recs.append(rec)
        return recs

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            per_rep = list(ex.map(one, range(B)))
    else:
        per_rep = [one(b) for b in range(B)]
    records = [r for recs in per_rep for r in recs]

    metrics, n_ok, n_bad, n_flag = {}, {}, {}, {}
    for name in fitters:
        mine = [r for r in records if r["model"] == name]
        ok = [r for r in mine if r["status"] == "ok"]
        n_ok[name] = len(ok)
        n_bad[name] = len(mine) - len(ok)
        n_flag[name] = sum(1 for r in ok if r.get("rhat_max", 0) > RHAT_FLAG)
        if n_bad[name] > MAX_FAILURE_FRACTION * B:
            raise ReplicationError(
                f"{n_bad[name]} of {B} replications failed for model {name}")
        metrics[name] = _metrics([r["estimates"] for r in ok], truth, params)
    return StudyResult(MetricsTable(list(params), metrics, n_ok, n_bad, n_flag), records)


def replication_study(scn: SimScenario, priors: PriorConfig | None = None,
                      cfg: SamplerConfig | None = None, rng=None, *,
                      models=("joint", "longitudinal-only"), fitters: dict | None = None,
                      censor_rate: float | None = None, workers: int = 1) -> StudyResult:
    """Simulate ``scn.replications`` datasets and fit each model to each.

    The censoring rate is calibrated once to ``scn.target_censoring``
    unless given. ``rng`` (an integer) overrides ``scn.seed``. Custom
    ``fitters`` (``name -> fitter(data, seed)``) replace the default
    sampler-based fits of ``models``.
    """
    from ..fit import fit

    scn.validate()
    seed = int(rng) if isinstance(rng, (int, np.integer)) else scn.seed
    cfg = cfg or SamplerConfig()
    if censor_rate is None:
        tune_seq = np.random.SeedSequence([seed, 1])
        censor_rate = tune_censoring_rate(scn, scn.target_censoring,
                                          np.random.default_rng(tune_seq))
    if fitters is None:
        def make(model):
            def fitter(data, fit_seed):
                return fit(data.subjects, priors, cfg, fit_seed, model=model)
            return fitter
        fitters = {m: make(m) for m in models}

    def simulate(r):
        return generate_dataset(scn, censor_rate, r)

    res = run_replications(scn.replications, seed, simulate, fitters,
                           scn.truth.structural(), METRICS_ORDER, workers=workers)
    res.censor_rate = censor_rate
    return res
