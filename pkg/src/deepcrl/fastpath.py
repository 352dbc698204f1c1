"""Hand-fused forward/backward for the residual networks and both losses.

This module computes exactly the gradients the tape engine produces for
`infonce_loss` and `actor_loss` (same formulas, same epsilons), but with
closed-form backward passes and no graph bookkeeping, which makes desk-scale
training several times faster.  The tape path in `crl` stays the reference;
tests assert the two agree.
"""

from __future__ import annotations

import numpy as np

from . import crl
from .arch import BuiltNetwork
from .nn import NonFiniteError

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False


class _Layers:
    """Cached parameter-array views for one BuiltNetwork's blocks."""

    def __init__(self, net: BuiltNetwork):
        s = net.params
        self.units = []            # per block: list of 4 (W, b, gain, beta)
        for i in range(net.spec.num_blocks):
            block = []
            for u in range(4):
                p = f"block{i}.u{u}"
                block.append((s[f"{p}.W"].value, s[f"{p}.b"].value,
                              s[f"{p}.ln_g"].value, s[f"{p}.ln_b"].value))
            self.units.append(block)
        self.eps = net.ln_eps


def _ln_swish_fwd_np(a, gain, beta, eps):
    mu = a.mean(axis=-1, keepdims=True)
    c = a - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = c * inv
    z = y * gain + beta
    sig = 1.0 / (1.0 + np.exp(-z))
    return z * sig, (y, inv, z, sig)


def _ln_swish_bwd_np(dout, cache, gain):
    y, inv, z, sig = cache
    dz = dout * (sig + z * sig * (1.0 - sig))
    dgain = (dz * y).sum(axis=0)
    dbeta = dz.sum(axis=0)
    gg = dz * gain
    da = inv * (gg - gg.mean(axis=-1, keepdims=True)
                - y * (gg * y).mean(axis=-1, keepdims=True))
    return da, dgain, dbeta


if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _ln_swish_fwd_kernel(a, gain, beta, eps):
        B, W = a.shape
        out = np.empty_like(a)
        y = np.empty_like(a)
        z = np.empty_like(a)
        sig = np.empty_like(a)
        inv = np.empty((B, 1), dtype=a.dtype)
        for i in range(B):
            mu = 0.0
            for j in range(W):
                mu += a[i, j]
            mu /= W
            var = 0.0
            for j in range(W):
                c = a[i, j] - mu
                var += c * c
            var /= W
            s = 1.0 / np.sqrt(var + eps)
            inv[i, 0] = s
            for j in range(W):
                yv = (a[i, j] - mu) * s
                zv = yv * gain[j] + beta[j]
                sv = 1.0 / (1.0 + np.exp(-zv))
                y[i, j] = yv
                z[i, j] = zv
                sig[i, j] = sv
                out[i, j] = zv * sv
        return out, y, inv, z, sig

    @numba.njit(cache=True)
    def _ln_swish_bwd_kernel(dout, y, inv, z, sig, gain):
        B, W = dout.shape
        da = np.empty_like(dout)
        dgain = np.zeros(W, dtype=dout.dtype)
        dbeta = np.zeros(W, dtype=dout.dtype)
        gg = np.empty(W, dtype=dout.dtype)
        for i in range(B):
            m1 = 0.0
            m2 = 0.0
            for j in range(W):
                sv = sig[i, j]
                dz = dout[i, j] * (sv + z[i, j] * sv * (1.0 - sv))
                dgain[j] += dz * y[i, j]
                dbeta[j] += dz
                g = dz * gain[j]
                gg[j] = g
                m1 += g
                m2 += g * y[i, j]
            m1 /= W
            m2 /= W
            s = inv[i, 0]
            for j in range(W):
                da[i, j] = s * (gg[j] - m1 - y[i, j] * m2)
        return da, dgain, dbeta

    def _ln_swish_fwd(a, gain, beta, eps):
        out, y, inv, z, sig = _ln_swish_fwd_kernel(
            np.ascontiguousarray(a), gain, beta, a.dtype.type(eps))
        return out, (y, inv, z, sig)

    def _ln_swish_bwd(dout, cache, gain):
        y, inv, z, sig = cache
        return _ln_swish_bwd_kernel(np.ascontiguousarray(dout), y, inv, z,
                                    sig, gain)
else:
    _ln_swish_fwd = _ln_swish_fwd_np
    _ln_swish_bwd = _ln_swish_bwd_np


def forward(net: BuiltNetwork, x: np.ndarray, cache: dict = None) -> np.ndarray:
    """Residual-MLP forward; pass a dict to collect the backward cache."""
    lay = net._fast_layers if hasattr(net, "_fast_layers") else _Layers(net)
    net._fast_layers = lay
    s = net.params
    h = x @ s["in_proj.W"].value + s["in_proj.b"].value
    unit_caches = []
    block_inputs = []
    for i in range(net.spec.num_blocks):
        block_inputs.append(h)
        z = h
        for u in range(4):
            W, b, g, beta = lay.units[i][u]
            zin = z
            z, c = _ln_swish_fwd(zin @ W + b, g, beta, lay.eps)
            if cache is not None:
                unit_caches.append((zin, c))
        h = h + z
    out = h @ s["head.W"].value + s["head.b"].value
    if cache is not None:
        cache["x"] = x
        cache["h_final"] = h
        cache["units"] = unit_caches
        cache["block_inputs"] = block_inputs
    return out


def backward(net: BuiltNetwork, cache: dict, dout: np.ndarray,
             accumulate: bool = True, need_dx: bool = False):
    """Backprop `dout` through a cached forward.

    With accumulate=True, parameter grads are added to the store buffers
    (mirroring the tape).  Returns d(input) when need_dx is set.
    """
    lay = net._fast_layers
    s = net.params

    def acc(name, g):
        if accumulate:
            s[name].grad += g

    acc("head.W", cache["h_final"].T @ dout)
    acc("head.b", dout.sum(axis=0))
    dh = dout @ s["head.W"].value.T
    units = cache["units"]
    for i in reversed(range(net.spec.num_blocks)):
        dz = dh                     # branch output grad; skip keeps dh as-is
        for u in reversed(range(4)):
            W, b, g, beta = lay.units[i][u]
            zin, c = units[i * 4 + u]
            da, dgain, dbeta = _ln_swish_bwd(dz, c, g)
            p = f"block{i}.u{u}"
            acc(f"{p}.W", zin.T @ da)
            acc(f"{p}.b", da.sum(axis=0))
            acc(f"{p}.ln_g", dgain)
            acc(f"{p}.ln_b", dbeta)
            dz = da @ W.T
        dh = dh + dz
    acc("in_proj.W", cache["x"].T @ dh)
    acc("in_proj.b", dh.sum(axis=0))
    if need_dx:
        return dh @ s["in_proj.W"].value.T
    return None


# -- optimizer ----------------------------------------------------------------

if HAVE_NUMBA:
    @numba.njit(cache=True)
    def _finite_kernel(g):
        for k in range(g.size):
            if not np.isfinite(g[k]):
                return False
        return True

    @numba.njit(cache=True)
    def _adam_kernel(p, g, m, v, lr, b1, b2, bc1, bc2, eps):
        for k in range(p.size):
            gv = g[k]
            m[k] = b1 * m[k] + (1.0 - b1) * gv
            v[k] = b2 * v[k] + (1.0 - b2) * gv * gv
            p[k] -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + eps)
            g[k] = 0.0


def adam_step(store, state):
    """Same update and error contract as `nn.adam_step`, fused elementwise."""
    if not HAVE_NUMBA:
        from . import nn
        return nn.adam_step(store, state)
    for name, p in store.items():
        if not _finite_kernel(p.grad.ravel()):
            raise NonFiniteError(f"non-finite gradient in entry {name}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in store.items():
        _adam_kernel(p.value.ravel(), p.grad.ravel(), state.m[name].ravel(),
                     state.v[name].ravel(), state.lr, b1, b2, bc1, bc2,
                     state.eps)


# -- losses -------------------------------------------------------------------

def critic_step_grads(states, actions, goals, critic, lam: float) -> float:
    """InfoNCE loss + logsumexp penalty; grads accumulated into both encoders."""
    sa = np.concatenate([states, actions], axis=-1)
    c_sa, c_g = {}, {}
    phi = forward(critic.sa_encoder, sa, c_sa)
    psi = forward(critic.g_encoder, goals, c_g)
    B = len(phi)

    phi_sq = (phi * phi).sum(axis=1, keepdims=True)
    psi_sq = (psi * psi).sum(axis=1, keepdims=True).T
    sq = phi_sq + psi_sq - 2.0 * (phi @ psi.T)
    mask = sq > 0
    d = np.sqrt(sq * mask + crl._DIST_EPS)
    L = -d

    m = L.max(axis=1, keepdims=True)
    e = np.exp(L - m)
    sum_e = e.sum(axis=1, keepdims=True)
    lse = (np.log(sum_e) + m)[:, 0]
    idx = np.arange(B)
    loss = float((lse - L[idx, idx]).mean() + lam * (lse * lse).mean())

    P = e / sum_e
    dL = P / B
    dL[idx, idx] -= 1.0 / B
    if lam != 0.0:
        dL += (2.0 * lam / B) * lse[:, None] * P
    dsq = -dL * (0.5 / d) * mask    # dL/dd = -1, dd/dsq = 0.5/d on the mask
    dphi = 2.0 * (dsq.sum(axis=1, keepdims=True) * phi - dsq @ psi)
    dpsi = 2.0 * (dsq.sum(axis=0)[:, None] * psi - dsq.T @ phi)
    backward(critic.sa_encoder, c_sa, dphi)
    backward(critic.g_encoder, c_g, dpsi)
    return loss


def actor_step_grads(states, goals, policy, critic, alpha: float,
                     noise: np.ndarray) -> float:
    """Actor objective -E[energy] + alpha E[log pi]; grads into the actor only."""
    obs = np.concatenate([states, goals], axis=-1)
    c_actor = {}
    out = forward(policy.actor, obs, c_actor)
    A = policy.action_dim
    mean = out[:, :A]
    raw = out[:, A:]
    half = 0.5 * (crl.LOG_STD_MAX - crl.LOG_STD_MIN)
    tanh_raw = np.tanh(raw)
    log_std = crl.LOG_STD_MIN + half * (tanh_raw + 1.0)
    std = np.exp(log_std)
    u = mean + std * noise
    tanh_u = np.tanh(u)
    a = tanh_u * policy.action_scale

    sp = np.logaddexp(0.0, -2.0 * u)
    log_det = 2.0 * (np.log(2.0) - u - sp) + np.log(policy.action_scale)
    gauss_logp = -0.5 * noise * noise - log_std - 0.5 * np.log(2.0 * np.pi)
    log_prob = (gauss_logp - log_det).sum(axis=1)
    if not np.all(np.isfinite(log_prob)):
        raise NonFiniteError("non-finite policy log-density in actor_loss")

    sa = np.concatenate([states, a], axis=-1)
    c_sa = {}
    phi = forward(critic.sa_encoder, sa, c_sa)
    psi = forward(critic.g_encoder, goals)
    diff = phi - psi
    r = np.sqrt((diff * diff).sum(axis=1) + crl._DIST_EPS)
    B = len(states)
    loss = float(r.mean())          # -mean(energy), energy = -r
    if alpha != 0.0:
        loss += alpha * float(log_prob.mean())

    dphi = diff / (B * r[:, None])  # d mean(r) / d phi
    dsa = backward(critic.sa_encoder, c_sa, dphi, accumulate=False, need_dx=True)
    da = dsa[:, states.shape[1]:]
    du = da * policy.action_scale * (1.0 - tanh_u * tanh_u)
    if alpha != 0.0:
        sig2u = 1.0 / (1.0 + np.exp(2.0 * u))       # sigmoid(-2u)
        du += (alpha / B) * (2.0 - 4.0 * sig2u)     # -d log_det / du
    dmean = du
    dlog_std = du * noise * std
    if alpha != 0.0:
        dlog_std += -alpha / B
    draw = dlog_std * half * (1.0 - tanh_raw * tanh_raw)
    dout = np.concatenate([dmean, draw], axis=-1)
    backward(policy.actor, c_actor, dout)
    return loss


def act(policy, states, goals, rng=None, deterministic=False) -> np.ndarray:
    """Fused equivalent of `crl.policy_sample` for batched collection/eval."""
    obs = np.concatenate([states, goals], axis=-1)
    out = forward(policy.actor, obs)
    A = policy.action_dim
    mean = out[:, :A]
    if deterministic:
        return np.tanh(mean) * policy.action_scale
    raw = out[:, A:]
    half = 0.5 * (crl.LOG_STD_MAX - crl.LOG_STD_MIN)
    log_std = crl.LOG_STD_MIN + half * (np.tanh(raw) + 1.0)
    noise = rng.standard_normal((len(obs), A)).astype(obs.dtype)
    u = mean + np.exp(log_std) * noise
    return np.tanh(u) * policy.action_scale
