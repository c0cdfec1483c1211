"""Gradient-based MCMC and convergence diagnostics."""
from .adapt import DualAveraging, WelfordVariance, warmup_windows
from .core import ChainResult, PosteriorDraws, SamplerConfig, SamplerError
from .diagnostics import effective_sample_size, ess, rhat, split_rhat
from .driver import chain_seeds, run_chain, sample
from .init import global_start, initialize
from .kernels_jax import JaxDensity

__all__ = [
    "SamplerConfig", "SamplerError", "PosteriorDraws", "ChainResult", "JaxDensity",
    "sample", "run_chain", "chain_seeds", "warmup_windows", "DualAveraging",
    "WelfordVariance", "rhat", "ess", "split_rhat", "effective_sample_size",
    "initialize", "global_start",
]
