"""Compiled transitions for JAX-traceable log densities.

A whole NUTS transition runs inside one jitted call. Subtrees are built
iteratively, one leapfrog step per loop pass. Each even leaf ``m``
starts subtrees of several sizes; it stores its sharp momentum, the
momentum prefix sums around it and the preceding leaf's sharp momentum
in checkpoint slot ``popcount(m >> 1)``. An odd leaf ``i`` completes
subtrees of sizes ``2, 4, ..., 2^k`` (``k`` = trailing one bits of
``i``), whose starts occupy consecutive slots, and each is checked with
the same three U-turn conditions as the recursive numpy kernel: the
whole subtree, its first half plus the second half's first leaf, and
the first half's last leaf plus the second half.
"""
from __future__ import annotations

import jax
import jax.numpy as jnp
import numpy as np

from .core import MAX_DELTA_H, SamplerError

jax.config.update("jax_enable_x64", True)

__all__ = ["JaxDensity", "JaxKernel"]


class JaxDensity:
    """A JAX-traceable log density ``theta -> scalar``.

    Calling the object evaluates ``(value, gradient)`` as numpy values,
    so it also works with the numpy kernels.
    """

    def __init__(self, logp):
        self.logp = logp
        self._vg = jax.jit(jax.value_and_grad(logp))

    def __call__(self, theta):
        v, g = self._vg(np.asarray(theta, dtype=float))
        return float(v), np.asarray(g)


def _f(x):
    return jnp.asarray(x, dtype=jnp.float64)


def _b(x):
    return jnp.asarray(x, dtype=bool)


def _build_functions(logp, max_depth: int, hmc_steps: int):
    vg = jax.value_and_grad(logp)
    n_levels = max_depth + 1

    def safe_vg(q):
        v, g = vg(q)
        ok = jnp.isfinite(v) & jnp.all(jnp.isfinite(g))
        return jnp.where(ok, v, -jnp.inf), jnp.where(ok, g, 0.0)

    def leapfrog(q, p, g, eps, inv_m):
        p = p + 0.5 * eps * g
        q = q + eps * inv_m * p
        v, g = safe_vg(q)
        p = p + 0.5 * eps * g
        return q, p, g, v

    def hamiltonian(v, p, inv_m):
        h = -v + 0.5 * jnp.dot(p, inv_m * p)
        return jnp.where(jnp.isnan(h), jnp.inf, h)

    def momentum(key, inv_m):
        return jax.random.normal(key, inv_m.shape) / jnp.sqrt(inv_m)

    def subtree(q, p, g, v, depth, sign, eps, inv_m, H0, key):
        D = q.shape[0]
        zeros = jnp.zeros(D)
        # one checkpoint row per active subtree start, plus a scratch row
        zl = jnp.zeros((n_levels + 1, D))
        n_leaves = jnp.left_shift(1, depth)
        s0 = dict(
            i=jnp.int32(0), q=q, p=p, g=g, v=v, key=key, log_w=_f(-jnp.inf),
            sq=q, sp=p, sg=g, sv=v, sum_acc=_f(0.0), div=_b(False), turn=_b(False),
            P=zeros, P_prev=zeros, prev_ps=zeros,
            c_ps=zl, c_P_before=zl, c_P=zl, c_prev_ps=zl, c_P_prev2=zl,
        )

        def cond(s):
            return (s["i"] < n_leaves) & ~s["div"] & ~s["turn"]

        def row(a, k):
            return jax.lax.dynamic_index_in_dim(a, k, keepdims=False)

        def put(a, k, x):
            return jax.lax.dynamic_update_index_in_dim(a, x, k, 0)

        def body(s):
            key, ku = jax.random.split(s["key"])
            q, p, g, v = leapfrog(s["q"], s["p"], s["g"], sign * eps, inv_m)
            delta = hamiltonian(v, p, inv_m) - H0
            div = delta > MAX_DELTA_H
            lw = -delta
            log_w = jnp.logaddexp(s["log_w"], lw)
            take = jnp.log(jax.random.uniform(ku)) < lw - log_w
            acc = jnp.minimum(1.0, jnp.exp(-delta))
            ps = inv_m * p
            i = s["i"]
            P_before = s["P"]
            P = P_before + p
            # even leaves start subtrees; slot = popcount(i >> 1)
            slot = jnp.where(i % 2 == 0, jax.lax.population_count(i >> 1), n_levels)
            c_ps = put(s["c_ps"], slot, ps)
            c_P_before = put(s["c_P_before"], slot, P_before)
            c_P = put(s["c_P"], slot, P)
            c_prev_ps = put(s["c_prev_ps"], slot, s["prev_ps"])
            c_P_prev2 = put(s["c_P_prev2"], slot, s["P_prev"])
            # leaf i completes subtrees of sizes 2 .. 2^k, k = trailing ones of i
            n_done = jax.lax.population_count(i ^ (i + 1)) - 1
            top = jax.lax.population_count(i >> 1)

            def check_cond(c):
                return (c[0] <= n_done) & ~c[1]

            def check(c):
                lvl = c[0]
                k = top - lvl + 1
                ps_m = row(c_ps, k)
                rho = P - row(c_P_before, k)
                ok = (jnp.dot(ps_m, rho) > 0) & (jnp.dot(ps, rho) > 0)
                # halves; for size-2 subtrees these repeat the check above
                h = jnp.minimum(k + 1, n_levels)
                va = row(c_P, h) - row(c_P_before, k)
                ok2 = (jnp.dot(ps_m, va) > 0) & (jnp.dot(row(c_ps, h), va) > 0)
                vb = P - row(c_P_prev2, h)
                ok3 = (jnp.dot(row(c_prev_ps, h), vb) > 0) & (jnp.dot(ps, vb) > 0)
                ok &= (lvl == 1) | (ok2 & ok3)
                return lvl + 1, ~ok

            _, turn = jax.lax.while_loop(check_cond, check, (jnp.int32(1), _b(False)))
            return dict(
                i=i + 1, q=q, p=p, g=g, v=v, key=key,
                log_w=log_w,
                sq=jnp.where(take, q, s["sq"]), sp=jnp.where(take, p, s["sp"]),
                sg=jnp.where(take, g, s["sg"]), sv=jnp.where(take, v, s["sv"]),
                sum_acc=s["sum_acc"] + acc, div=div, turn=turn,
                P=P, P_prev=P_before, prev_ps=ps,
                c_ps=c_ps, c_P_before=c_P_before, c_P=c_P, c_prev_ps=c_prev_ps,
                c_P_prev2=c_P_prev2,
            )

        out = jax.lax.while_loop(cond, body, s0)
        # the first leaf sits in slot 0 (no later leaf maps there)
        out["first_ps"] = out["c_ps"][0]
        out["first_p"] = out["c_P"][0]
        return out

    @jax.jit
    def nuts(q, v, g, eps, inv_m, key):
        key, k_mom, k_loop = jax.random.split(key, 3)
        p0 = momentum(k_mom, inv_m)
        H0 = hamiltonian(v, p0, inv_m)
        ps0 = inv_m * p0
        edge = dict(q=q, p=p0, g=g, v=v, ps=ps0)
        t0 = dict(
            depth=jnp.int32(0), key=k_loop, left=edge, right=edge, rho=p0, log_w=_f(0.0),
            sq=q, sp=p0, sg=g, sv=v, sum_acc=_f(0.0), n_lf=jnp.int32(0), div=_b(False),
            turn=_b(False),
        )

        def cond(t):
            return (t["depth"] < max_depth) & ~t["div"] & ~t["turn"]

        def body(t):
            key, k_dir, k_sub, k_u = jax.random.split(t["key"], 4)
            right = jax.random.bernoulli(k_dir)
            pick = lambda a, b: jax.tree_util.tree_map(  # noqa: E731
                lambda x, y: jnp.where(right, x, y), a, b)
            near = pick(t["right"], t["left"])
            far = pick(t["left"], t["right"])
            sign = jnp.where(right, 1.0, -1.0)
            s = subtree(near["q"], near["p"], near["g"], near["v"], t["depth"], sign, eps,
                        inv_m, H0, k_sub)
            valid = ~s["div"] & ~s["turn"]
            take = valid & (jnp.log(jax.random.uniform(k_u)) < s["log_w"] - t["log_w"])
            last_ps = inv_m * s["p"]
            rho = t["rho"] + s["P"]
            ok = (jnp.dot(far["ps"], rho) > 0) & (jnp.dot(last_ps, rho) > 0)
            va = t["rho"] + s["first_p"]
            ok &= (jnp.dot(far["ps"], va) > 0) & (jnp.dot(s["first_ps"], va) > 0)
            vb = s["P"] + near["p"]
            ok &= (jnp.dot(near["ps"], vb) > 0) & (jnp.dot(last_ps, vb) > 0)
            new_edge = dict(q=s["q"], p=s["p"], g=s["g"], v=s["v"], ps=last_ps)
            return dict(
                depth=t["depth"] + 1, key=key,
                left=pick(t["left"], new_edge), right=pick(new_edge, t["right"]),
                rho=rho,
                log_w=jnp.where(valid, jnp.logaddexp(t["log_w"], s["log_w"]), t["log_w"]),
                sq=jnp.where(take, s["sq"], t["sq"]), sp=jnp.where(take, s["sp"], t["sp"]),
                sg=jnp.where(take, s["sg"], t["sg"]), sv=jnp.where(take, s["sv"], t["sv"]),
                sum_acc=t["sum_acc"] + s["sum_acc"], n_lf=t["n_lf"] + s["i"],
                div=s["div"], turn=s["turn"] | (valid & ~ok),
            )

        t = jax.lax.while_loop(cond, body, t0)
        stats = jnp.stack([
            t["sum_acc"] / jnp.maximum(t["n_lf"], 1), t["div"].astype(float),
            t["depth"].astype(float), t["n_lf"].astype(float),
            hamiltonian(t["sv"], t["sp"], inv_m),
        ])
        return t["sq"], t["sv"], t["sg"], stats, key

    @jax.jit
    def hmc(q, v, g, eps, inv_m, key):
        key, k_mom, k_u = jax.random.split(key, 3)
        p0 = momentum(k_mom, inv_m)
        H0 = hamiltonian(v, p0, inv_m)

        def step(_, c):
            return leapfrog(c[0], c[1], c[2], eps, inv_m)

        q1, p1, g1, v1 = jax.lax.fori_loop(0, hmc_steps, step, (q, p0, g, v))
        H1 = hamiltonian(v1, p1, inv_m)
        delta = H1 - H0
        div = ~(delta <= MAX_DELTA_H)
        acc = jnp.where(jnp.isfinite(delta), jnp.minimum(1.0, jnp.exp(-delta)), 0.0)
        take = ~div & (jax.random.uniform(k_u) < acc)
        stats = jnp.stack([acc, div.astype(float), 0.0, float(hmc_steps),
                           jnp.where(take, H1, H0)])
        return (jnp.where(take, q1, q), jnp.where(take, v1, v), jnp.where(take, g1, g),
                stats, key)

    @jax.jit
    def one_step(q, v, g, eps, inv_m, key):
        key, k_mom = jax.random.split(key)
        p0 = momentum(k_mom, inv_m)
        _, p1, _, v1 = leapfrog(q, p0, g, eps, inv_m)
        return hamiltonian(v, p0, inv_m) - hamiltonian(v1, p1, inv_m), key

    return jax.jit(safe_vg), nuts, hmc, one_step


class JaxKernel:
    """NUTS or fixed-length HMC for a :class:`JaxDensity`."""

    def __init__(self, density: JaxDensity, key_seed: int, algorithm: str = "nuts",
                 max_depth: int = 10, hmc_steps: int = 32):
        # compiled functions are shared by all chains on the same density
        cache = density.__dict__.setdefault("_kernels", {})
        if (max_depth, hmc_steps) not in cache:
            cache[(max_depth, hmc_steps)] = _build_functions(density.logp, max_depth, hmc_steps)
        self._vg, nuts, hmc, self._one_step = cache[(max_depth, hmc_steps)]
        self._step = nuts if algorithm == "nuts" else hmc
        self.key = jax.random.PRNGKey(key_seed)

    def init_state(self, q):
        q = np.array(q, dtype=float)
        v, g = self._vg(q)
        if not np.isfinite(float(v)):
            raise SamplerError("log posterior or gradient not finite at the initial point")
        return (q, v, g)

    @staticmethod
    def position(state):
        return np.asarray(state[0])

    def transition(self, state, eps, inv_metric):
        q, v, g, stats, self.key = self._step(*state, eps, inv_metric, self.key)
        acc, div, depth, n_lf, energy = np.asarray(stats).tolist()
        return (q, v, g), (acc, bool(div), int(depth), int(n_lf), energy)

    def one_step_delta(self, state, eps, inv_metric) -> float:
        delta, self.key = self._one_step(*state, eps, inv_metric, self.key)
        return float(delta)
