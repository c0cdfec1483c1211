"""Warmup adaptation: dual-averaging step size and windowed diagonal metric.

Windows follow Stan's defaults: a 75-iteration initial fast phase, slow
windows of 25, 50, 100, ... iterations (the last stretched to fill), and
a 50-iteration terminal fast phase. Short warmups scale these to 15% /
75% / 10%.
"""
from __future__ import annotations

import math

import numpy as np

__all__ = ["DualAveraging", "warmup_windows", "WelfordVariance"]

INIT_BUFFER = 75
TERM_BUFFER = 50
BASE_WINDOW = 25


class DualAveraging:
    def __init__(self, step_size, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat) -> float:
        self.counter += 1
        a = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def warmup_windows(warmup: int):
    """Return ``(init_buffer, term_buffer, slow-window end iterations)``."""
    init, term, base = INIT_BUFFER, TERM_BUFFER, BASE_WINDOW
    if init + term + base > warmup:
        init = int(0.15 * warmup)
        term = int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start, size = init, base
    slow_end = warmup - term
    while start < slow_end:
        end = start + size
        # a window that would leave a remainder shorter than the next
        # doubled window absorbs it
        if end + 2 * size > slow_end:
            end = slow_end
        ends.append(end)
        start, size = end, 2 * size
    return init, term, ends


class WelfordVariance:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    def regularized(self) -> np.ndarray:
        n = self.n
        var = self.m2 / (n - 1.0)
        return (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))


