"""Sampler configuration, errors and draw containers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "PosteriorDraws",
    "ChainResult",
    "MAX_DELTA_H",
]

# energy error above which a transition counts as divergent
MAX_DELTA_H = 1000.0


class SamplerError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    samples: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_jitter: float = 2.0
    algorithm: str = "nuts"
    hmc_steps: int = 32
    adapt: bool = True
    parallel: bool = False
    init_step_size: float = 0.1
    keep_unconstrained: bool = False

    def validate(self):
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if self.adapt and self.warmup < 100:
            raise ValueError("warmup must be at least 100 when adaptation is enabled")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be at least 1")
        if self.algorithm not in ("nuts", "hmc"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.hmc_steps < 1:
            raise ValueError("hmc_steps must be at least 1")
        if not self.init_step_size > 0:
            raise ValueError("init_step_size must be positive")
        return self


@dataclass
class ChainResult:
    """Raw output of one chain on the unconstrained scale."""

    draws: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    energy: np.ndarray
    warmup_divergences: int = 0

    def diagnostics(self) -> dict:
        return {
            "divergences": int(self.divergent.sum()),
            "warmup_divergences": self.warmup_divergences,
            "step_size": self.step_size,
            "mean_accept_stat": float(self.accept_stat.mean()),
            "mean_tree_depth": float(self.tree_depth.mean()),
            "mean_leapfrog": float(self.n_leapfrog.mean()),
        }


@dataclass
class PosteriorDraws:
    """Post-warmup draws on the constrained scale, ``(chains, samples, dim)``."""

    names: list
    values: np.ndarray
    diagnostics: list = field(default_factory=list)
    unconstrained: np.ndarray | None = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.names):
            raise ValueError("values must be (chains, samples, len(names))")
        self._index = {n: i for i, n in enumerate(self.names)}

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    def param(self, name: str) -> np.ndarray:
        """``(chains, samples)`` draws of one named parameter."""
        try:
            return self.values[:, :, self._index[name]]
        except KeyError:
            raise KeyError(f"unknown parameter {name!r}") from None

    def pooled(self, name: str) -> np.ndarray:
        return self.param(name).reshape(-1)

    def mean(self) -> dict:
        return dict(zip(self.names, self.values.reshape(-1, len(self.names)).mean(axis=0)))

    def interval(self, name: str, level: float = 0.95):
        a = (1.0 - level) / 2.0
        lo, hi = np.quantile(self.pooled(name), [a, 1.0 - a])
        return float(lo), float(hi)

    def total_divergences(self) -> int:
        return sum(d.get("divergences", 0) for d in self.diagnostics)


