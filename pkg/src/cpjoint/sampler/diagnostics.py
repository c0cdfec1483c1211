"""Convergence diagnostics: split-chain R-hat and effective sample size."""
from __future__ import annotations

import numpy as np

__all__ = ["split_rhat", "effective_sample_size", "rhat", "ess"]


def split_rhat(x) -> float:
    """Split-chain potential scale reduction for a ``(chains, draws)`` array.

    Each chain is halved, giving ``2 * chains`` sequences. When the
    within-sequence variance is zero the statistic is 1.0 if all
    sequences share the same value and ``inf`` otherwise.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    m, n = x.shape
    if m < 2 or n < 50:
        raise ValueError(f"R-hat needs >= 2 chains of >= 50 draws, got {m} x {n}")
    half = n // 2
    seqs = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    means = seqs.mean(axis=1)
    w = seqs.var(axis=1, ddof=1).mean()
    b_over_n = means.var(ddof=1)
    if w == 0:
        return 1.0 if b_over_n == 0 else float("inf")
    var_plus = (half - 1) / half * w + b_over_n
    return float(np.sqrt(var_plus / w))


def _autocov(x):
    """Autocovariance of each row via FFT (biased estimator)."""
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def effective_sample_size(x) -> float:
    """Multi-chain ESS with Geyer's initial positive (monotone) sequence.

    ``x`` is ``(chains, draws)`` or a single 1-D chain. Returns 0.0 for
    a constant input; the result is clipped to the total draw count.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    m, n = x.shape
    if m * n < 100:
        raise ValueError("ESS needs at least 100 draws")
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return 0.0
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sums of adjacent pairs; keep the initial positive run, made monotone
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    total = 0.0
    prev = np.inf
    for k in range(n_pairs):
        pk = pairs[k]
        if pk <= 0:
            break
        pk = min(pk, prev)
        total += pk
        prev = pk
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(min(m * n / tau, m * n))


def rhat(draws, name: str) -> float:
    return split_rhat(draws.param(name))


def ess(draws, name: str) -> float:
    return effective_sample_size(draws.param(name))
