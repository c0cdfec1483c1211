"""Pure-numpy transitions for arbitrary ``theta -> (logp, grad)`` callables.

Recursive multinomial NUTS: each doubling builds a balanced subtree, a
proposal is drawn within it in proportion to ``exp(-H)``, and the top
level uses biased progressive sampling toward the newer subtree.
Termination uses the generalized U-turn criterion on sharp momenta with
the additional checks across merged subtrees. Slower than the JAX
kernels but independent of them, so it doubles as a reference.
"""
from __future__ import annotations

import math

import numpy as np

from .core import MAX_DELTA_H, SamplerError

__all__ = ["NumpyNuts", "NumpyHmc"]


class _Point:
    __slots__ = ("q", "p", "grad", "logp")

    def __init__(self, q, p, grad, logp):
        self.q, self.p, self.grad, self.logp = q, p, grad, logp


class _Tree:
    __slots__ = ("left", "right", "ps_left", "ps_right", "rho", "log_w", "sample",
                 "n_leapfrog", "sum_accept", "diverging", "turning")


def _no_uturn(ps_minus, ps_plus, rho) -> bool:
    return float(ps_plus @ rho) > 0 and float(ps_minus @ rho) > 0


class _NumpyKernel:
    def __init__(self, logp_grad, rng):
        self.logp_grad = logp_grad
        self.rng = rng
        self.inv_metric = None

    def init_state(self, q):
        q = np.array(q, dtype=float)
        logp, grad = self.logp_grad(q)
        grad = np.asarray(grad, dtype=float)
        if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
            raise SamplerError("log posterior or gradient not finite at the initial point")
        return _Point(q, np.zeros_like(q), grad, float(logp))

    @staticmethod
    def position(state):
        return state.q

    def _momentum(self, shape):
        return self.rng.standard_normal(shape) / np.sqrt(self.inv_metric)

    def hamiltonian(self, pt) -> float:
        h = -pt.logp + 0.5 * float(pt.p @ (self.inv_metric * pt.p))
        return h if math.isfinite(h) else math.inf

    def leapfrog(self, pt, eps) -> _Point:
        p = pt.p + 0.5 * eps * pt.grad
        q = pt.q + eps * (self.inv_metric * p)
        logp, grad = self.logp_grad(q)
        if not (math.isfinite(logp) and np.all(np.isfinite(grad))):
            return _Point(q, p, pt.grad, -math.inf)
        p = p + 0.5 * eps * grad
        return _Point(q, p, grad, logp)

    def one_step_delta(self, state, eps, inv_metric) -> float:
        """``H0 - H`` after one leapfrog step from fresh momentum."""
        self.inv_metric = inv_metric
        start = _Point(state.q, self._momentum(state.q.shape), state.grad, state.logp)
        h0 = self.hamiltonian(start)
        nxt = self.leapfrog(start, eps)
        h = self.hamiltonian(nxt) if math.isfinite(nxt.logp) else math.inf
        return h0 - h


class NumpyNuts(_NumpyKernel):
    def __init__(self, logp_grad, rng, max_depth: int):
        super().__init__(logp_grad, rng)
        self.max_depth = max_depth

    def _leaf(self, start, direction, eps, H0):
        pt = self.leapfrog(start, direction * eps)
        H = self.hamiltonian(pt) if math.isfinite(pt.logp) else math.inf
        delta = H - H0
        t = _Tree()
        t.left = t.right = t.sample = pt
        t.ps_left = t.ps_right = self.inv_metric * pt.p
        t.rho = pt.p.copy()
        t.log_w = -delta if math.isfinite(delta) else -math.inf
        t.n_leapfrog = 1
        if not math.isfinite(delta):
            t.sum_accept = 0.0
        else:
            t.sum_accept = 1.0 if delta <= 0 else math.exp(-delta)
        t.diverging = not (delta <= MAX_DELTA_H)
        t.turning = False
        return t

    def _build(self, start, depth, direction, eps, H0):
        if depth == 0:
            return self._leaf(start, direction, eps, H0)
        inner = self._build(start, depth - 1, direction, eps, H0)
        if inner.diverging or inner.turning:
            return inner
        edge = inner.right if direction > 0 else inner.left
        outer = self._build(edge, depth - 1, direction, eps, H0)
        inner.n_leapfrog += outer.n_leapfrog
        inner.sum_accept += outer.sum_accept
        if outer.diverging or outer.turning:
            inner.diverging = outer.diverging
            inner.turning = outer.turning
            return inner
        log_w = np.logaddexp(inner.log_w, outer.log_w)
        if log_w > -math.inf and math.log(self.rng.random()) < outer.log_w - log_w:
            inner.sample = outer.sample
        inner.log_w = log_w
        self._merge(inner, outer, direction)
        return inner

    @staticmethod
    def _merge(tree, new, direction):
        """Extend ``tree`` by ``new`` on side ``direction``; sets ``turning``."""
        if direction > 0:
            L, R = tree, new
        else:
            L, R = new, tree
        rho = L.rho + R.rho
        ok = _no_uturn(L.ps_left, R.ps_right, rho)
        ok = ok and _no_uturn(L.ps_left, R.ps_left, L.rho + R.left.p)
        ok = ok and _no_uturn(L.ps_right, R.ps_right, R.rho + L.right.p)
        tree.left, tree.ps_left = L.left, L.ps_left
        tree.right, tree.ps_right = R.right, R.ps_right
        tree.rho = rho
        tree.turning = not ok

    def transition(self, state, eps, inv_metric):
        self.inv_metric = inv_metric
        rng = self.rng
        p0 = self._momentum(state.q.shape)
        start = _Point(state.q, p0, state.grad, state.logp)
        H0 = self.hamiltonian(start)
        tree = _Tree()
        tree.left = tree.right = tree.sample = start
        tree.ps_left = tree.ps_right = inv_metric * p0
        tree.rho = p0.copy()
        tree.log_w = 0.0
        n_leapfrog, sum_accept = 0, 0.0
        diverging = False
        depth = 0
        while depth < self.max_depth:
            direction = 1 if rng.random() < 0.5 else -1
            edge = tree.right if direction > 0 else tree.left
            new = self._build(edge, depth, direction, eps, H0)
            depth += 1
            n_leapfrog += new.n_leapfrog
            sum_accept += new.sum_accept
            if new.diverging:
                diverging = True
                break
            if new.turning:
                break
            # biased progressive sampling toward the new subtree
            if math.log(rng.random()) < new.log_w - tree.log_w:
                tree.sample = new.sample
            tree.log_w = np.logaddexp(tree.log_w, new.log_w)
            self._merge(tree, new, direction)
            if tree.turning:
                break
        out = tree.sample
        stats = (sum_accept / max(n_leapfrog, 1), diverging, depth, n_leapfrog,
                 self.hamiltonian(out))
        return _Point(out.q, out.p, out.grad, out.logp), stats


class NumpyHmc(_NumpyKernel):
    """Fixed number of leapfrog steps followed by a Metropolis correction."""

    def __init__(self, logp_grad, rng, n_steps: int):
        super().__init__(logp_grad, rng)
        self.n_steps = n_steps

    def transition(self, state, eps, inv_metric):
        self.inv_metric = inv_metric
        p0 = self._momentum(state.q.shape)
        cur = _Point(state.q, p0, state.grad, state.logp)
        H0 = self.hamiltonian(cur)
        for _ in range(self.n_steps):
            cur = self.leapfrog(cur, eps)
            if not math.isfinite(cur.logp):
                break
        H = self.hamiltonian(cur) if math.isfinite(cur.logp) else math.inf
        delta = H - H0
        diverging = not (delta <= MAX_DELTA_H)
        accept = 0.0 if not math.isfinite(delta) else (1.0 if delta <= 0 else math.exp(-delta))
        if not diverging and self.rng.random() < accept:
            return cur, (accept, False, 0, self.n_steps, H)
        return state, (accept, diverging, 0, self.n_steps, H0)
