"""Contrastive RL objectives: dual-encoder critic energy, InfoNCE with
logsumexp penalty, and the tanh-Gaussian goal-conditioned policy.

Energy is the NEGATED L2 distance between embeddings, so larger energy means
the state-action pair is closer to the goal in representation space and the
InfoNCE loss pulls positive pairs together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .arch import BuiltNetwork
from .nn import NonFiniteError, ShapeError, Tensor

# keeps sqrt differentiable at zero distance; far below any tolerance we test
_DIST_EPS = 1e-12

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass
class CriticPair:
    sa_encoder: BuiltNetwork   # (state ⊕ action) -> repr_dim
    g_encoder: BuiltNetwork    # goal -> repr_dim
    repr_dim: int = 64


@dataclass
class GaussianPolicy:
    actor: BuiltNetwork        # (state ⊕ goal) -> (mean, raw log_std) per action dim
    action_dim: int
    action_scale: float = 1.0  # symmetric bounds [-scale, scale]


def critic_energy(phi_vec, psi_vec):
    """-||phi - psi||_2 for a single embedding pair (Tensor or ndarray)."""
    phi = T.as_tensor(phi_vec)
    psi = T.as_tensor(psi_vec)
    if phi.shape != psi.shape:
        raise ShapeError(f"embedding dims differ: {phi.shape} vs {psi.shape}")
    d = phi - psi
    return -T.sqrt((d * d).sum() + _DIST_EPS)


def pairwise_energies(phi: Tensor, psi: Tensor) -> Tensor:
    """B x B matrix of -||phi_i - psi_j||_2 via the Gram expansion."""
    phi_sq = (phi * phi).sum(axis=1, keepdims=True)        # (B, 1)
    psi_sq = (psi * psi).sum(axis=1, keepdims=True).T      # (1, B)
    sq = phi_sq + psi_sq - 2.0 * (phi @ psi.T)
    return -T.sqrt(T.relu(sq) + _DIST_EPS)


def energy_matrix(states, actions, goals, critic: CriticPair,
                  params_grad: bool = True) -> Tensor:
    """L[i][j] = energy(phi(s_i, a_i), psi(g_j)); diagonal = positive pairs."""
    sa = T.concat([T.as_tensor(states), T.as_tensor(actions)], axis=-1)
    phi = critic.sa_encoder.forward(sa, grad=params_grad)
    psi = critic.g_encoder.forward(T.as_tensor(goals), grad=params_grad)
    return pairwise_energies(phi, psi)


def infonce_loss(L: Tensor, lam: float = 0.1) -> Tensor:
    """Mean InfoNCE over rows plus lam * mean squared row-logsumexp."""
    L = T.as_tensor(L)
    B = L.shape[0]
    lse = T.logsumexp(L, axis=1)
    idx = np.arange(B)
    diag = L[idx, idx]
    loss = (lse - diag).mean()
    if lam != 0.0:
        loss = loss + lam * (lse * lse).mean()
    return loss


def _policy_dist(policy: GaussianPolicy, obs: Tensor, params_grad: bool):
    """Actor forward split into (mean, log_std) with a smooth log_std clamp."""
    out = policy.actor.forward(obs, grad=params_grad)
    A = policy.action_dim
    mean = out[:, :A]
    raw = out[:, A:]
    half = 0.5 * (LOG_STD_MAX - LOG_STD_MIN)
    log_std = LOG_STD_MIN + half * (T.tanh(raw) + 1.0)
    return mean, log_std


def _squash(policy: GaussianPolicy, u: Tensor):
    """tanh squash to action bounds plus the log|det Jacobian| correction."""
    a = T.tanh(u) * policy.action_scale
    # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
    log_det = 2.0 * (np.log(2.0) - u - T.softplus(-2.0 * u))
    log_det = log_det + np.log(policy.action_scale)
    return a, log_det


def sample_actions(policy: GaussianPolicy, obs, noise, params_grad: bool = True):
    """Reparameterized tanh-Gaussian sample and its log-density.

    `noise` is standard-normal, shape (B, action_dim); supplying it keeps the
    draw reproducible and the sample differentiable w.r.t. actor parameters.
    """
    obs = T.as_tensor(obs)
    mean, log_std = _policy_dist(policy, obs, params_grad)
    std = T.exp(log_std)
    u = mean + std * T.as_tensor(noise)
    gauss_logp = (-0.5 * ((u - mean) / std) ** 2 - log_std
                  - 0.5 * np.log(2.0 * np.pi))
    a, log_det = _squash(policy, u)
    log_prob = (gauss_logp - log_det).sum(axis=1)
    return a, log_prob


def actor_loss(states, goals, policy: GaussianPolicy, critic: CriticPair,
               alpha: float, noise) -> Tensor:
    """-mean energy of sampled actions + alpha * mean log-density.

    Critic parameters are held constant: no gradient reaches them.
    """
    obs = T.concat([T.as_tensor(states), T.as_tensor(goals)], axis=-1)
    a, log_prob = sample_actions(policy, obs, noise, params_grad=True)
    if not np.all(np.isfinite(log_prob.data)):
        raise NonFiniteError("non-finite policy log-density in actor_loss")
    sa = T.concat([T.as_tensor(states), a], axis=-1)
    phi = critic.sa_encoder.forward(sa, grad=False)
    psi = critic.g_encoder.forward(T.as_tensor(goals), grad=False).detach()
    d = phi - psi
    energy = -T.sqrt((d * d).sum(axis=1) + _DIST_EPS)
    loss = -energy.mean()
    if alpha != 0.0:
        loss = loss + alpha * log_prob.mean()
    return loss


def policy_sample(policy: GaussianPolicy, state, goal, seed=None,
                  deterministic: bool = False, rng=None) -> np.ndarray:
    """Action(s) for (state, goal); deterministic mode returns tanh(mean)."""
    single = np.asarray(state).ndim == 1
    state = np.atleast_2d(np.asarray(state))
    goal = np.atleast_2d(np.asarray(goal))
    obs = np.concatenate([state, goal], axis=-1)
    B = obs.shape[0]
    if deterministic:
        mean, _ = _policy_dist(policy, Tensor(obs), params_grad=False)
        a = np.tanh(mean.data) * policy.action_scale
    else:
        if rng is None:
            rng = np.random.default_rng(seed)
        noise = rng.standard_normal((B, policy.action_dim)).astype(obs.dtype)
        a, _ = sample_actions(policy, Tensor(obs), noise, params_grad=False)
        a = a.data
    return a[0] if single else a
