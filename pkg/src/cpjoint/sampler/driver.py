"""Chain driver: warmup adaptation, multi-chain execution, draw assembly.

Warmup runs dual averaging toward ``target_accept`` throughout; the
diagonal inverse metric is re-estimated at the end of every slow window,
after which the step size is re-initialized and dual averaging
restarts. The final step size is the dual-averaging iterate average.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .adapt import DualAveraging, WelfordVariance, warmup_windows
from .core import ChainResult, PosteriorDraws, SamplerConfig, SamplerError
from .kernels_jax import JaxDensity, JaxKernel
from .kernels_numpy import NumpyHmc, NumpyNuts

__all__ = ["run_chain", "sample", "chain_seeds", "find_step_size"]

LOG_08 = math.log(0.8)


def find_step_size(kernel, state, eps, inv_metric):
    """Double or halve ``eps`` until one-step acceptance crosses 0.8."""
    direction = 0
    for _ in range(200):
        delta = kernel.one_step_delta(state, eps, inv_metric)
        if direction == 0:
            direction = 1 if delta > LOG_08 else -1
        if direction == 1 and not delta > LOG_08:
            break
        if direction == -1 and not delta < LOG_08:
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps > 1e7:
            raise SamplerError("step size search diverged: posterior may be improper")
        if eps < 1e-300:
            raise SamplerError("step size collapsed to zero")
    return eps


def run_chain(kernel, init, cfg: SamplerConfig) -> ChainResult:
    state = kernel.init_state(init)
    dim = kernel.position(state).size
    inv_metric = np.ones(dim)
    eps = cfg.init_step_size
    if cfg.adapt:
        eps = find_step_size(kernel, state, eps, inv_metric)
    da = DualAveraging(eps, cfg.target_accept)
    init_buf, _, window_ends = warmup_windows(cfg.warmup) if cfg.adapt else (0, 0, [])
    welford = WelfordVariance(dim)
    warmup_div = 0

    for it in range(cfg.warmup):
        state, (acc, div, _, _, _) = kernel.transition(state, eps, inv_metric)
        warmup_div += int(div)
        if not cfg.adapt:
            continue
        eps = da.update(acc)
        if window_ends and init_buf <= it < window_ends[-1]:
            welford.add(kernel.position(state))
            if it + 1 in window_ends:
                inv_metric = welford.regularized()
                welford = WelfordVariance(dim)
                eps = find_step_size(kernel, state, eps, inv_metric)
                da.restart(eps)
    if cfg.adapt and cfg.warmup > 0:
        eps = da.final

    n = cfg.samples
    draws = np.empty((n, dim))
    stats = np.empty((n, 5))
    for it in range(n):
        state, st = kernel.transition(state, eps, inv_metric)
        draws[it] = kernel.position(state)
        stats[it] = st
    return ChainResult(draws, eps, inv_metric.copy(), stats[:, 0], stats[:, 1].astype(bool),
                       stats[:, 2].astype(int), stats[:, 3].astype(int), stats[:, 4],
                       warmup_div)


def chain_seeds(seed: int, chains: int):
    """Independent seed sequences derived from ``(seed, chain index)``."""
    return np.random.SeedSequence(seed).spawn(chains)


def _make_kernel(target, seq, cfg):
    rng = np.random.default_rng(seq)
    if isinstance(target, JaxDensity):
        key_seed = int(seq.generate_state(1, np.uint64)[0] >> np.uint64(1))
        kernel = JaxKernel(target, key_seed, cfg.algorithm, cfg.max_tree_depth, cfg.hmc_steps)
    elif cfg.algorithm == "nuts":
        kernel = NumpyNuts(target, rng, cfg.max_tree_depth)
    else:
        kernel = NumpyHmc(target, rng, cfg.hmc_steps)
    return kernel, rng


def sample(target, init, cfg: SamplerConfig, rng=None, *, names=None, transform=None):
    """Run ``cfg.chains`` chains and return constrained-scale draws.

    Parameters
    ----------
    target : JaxDensity or callable
        A :class:`JaxDensity` runs on the compiled kernels; any other
        callable ``theta -> (log density, gradient)`` runs on the numpy
        kernels.
    init : array or callable
        A starting vector shared by all chains, or ``init(rng) -> vector``
        called once per chain with that chain's numpy generator.
    rng : int, optional
        Overrides ``cfg.seed``. Chain streams are spawned from the seed.
    names, transform : optional
        ``transform`` maps a ``(draws, dim)`` unconstrained batch to
        ``(draws, len(names))`` constrained values. Defaults to the
        identity with names ``theta[k]``.
    """
    cfg.validate()
    seed = int(rng) if isinstance(rng, (int, np.integer)) else cfg.seed
    seqs = chain_seeds(seed, cfg.chains)

    def one(k):
        kernel, chain_rng = _make_kernel(target, seqs[k], cfg)
        start = init(chain_rng) if callable(init) else init
        return run_chain(kernel, start, cfg)

    if cfg.parallel and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=cfg.chains) as ex:
            results = list(ex.map(one, range(cfg.chains)))
    else:
        results = [one(k) for k in range(cfg.chains)]

    raw = np.stack([r.draws for r in results])
    dim = raw.shape[2]
    if transform is None:
        names = names or [f"theta[{k}]" for k in range(dim)]
        values = raw.copy()
    else:
        values = np.asarray(transform(raw.reshape(-1, dim))).reshape(cfg.chains, cfg.samples, -1)
    diags = []
    for r in results:
        d = r.diagnostics()
        d["max_tree_depth_hits"] = int((r.tree_depth >= cfg.max_tree_depth).sum())
        diags.append(d)
    if not np.all(np.isfinite(values)):
        raise SamplerError("non-finite constrained draw", diagnostics=diags)
    stats = {
        "accept_stat": np.stack([r.accept_stat for r in results]),
        "divergent": np.stack([r.divergent for r in results]),
        "tree_depth": np.stack([r.tree_depth for r in results]),
        "n_leapfrog": np.stack([r.n_leapfrog for r in results]),
        "energy": np.stack([r.energy for r in results]),
        "step_size": np.array([r.step_size for r in results]),
        "inv_metric": np.stack([r.inv_metric for r in results]),
    }
    return PosteriorDraws(list(names), values, diags,
                          raw if cfg.keep_unconstrained else None, stats)
