"""Online training orchestration: parallel collection, UTD-gated updates,
evaluation epochs, JSONL metrics, and binary checkpoints.

One gradient step (a critic update followed by an actor update) is performed
per `utd_ratio` aggregate environment steps, counted from the moment the
replay buffer first reaches its minimum size.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import config as config_mod
from . import crl, envs, fastpath, serialize
from .arch import NetworkSpec, build_network
from .config import TrainConfig
from .nn import AdamState, NonFiniteError, adam_step
from .replay import ReplayBuffer


@dataclass
class MetricsRecord:
    epoch: int
    env_steps: int
    grad_steps: int
    eval_time_near_goal: float
    eval_stderr: float
    critic_loss: float
    actor_loss: float
    critic_grad_norm: float
    actor_grad_norm: float
    wall_seconds: float


class CheckpointMismatchError(RuntimeError):
    pass


class Agent:
    """Actor + critic pair with their optimizers; may act and/or learn."""

    def __init__(self, cfg: TrainConfig, spec: envs.EnvSpec, seed_base: int,
                 actor_depth=None, critic_depth=None):
        self.cfg = cfg
        self.env_spec = spec
        self.actor_depth = actor_depth or cfg.actor_depth
        self.critic_depth = critic_depth or cfg.critic_depth
        dtype = np.float32 if cfg.precision == "float32" else np.float64
        self.dtype = dtype
        if self.actor_depth >= 1024:
            warnings.warn(
                "actor depth >= 1024 is known to be unstable; consider scaling "
                "only the critic at extreme depths")
        obs_dim = spec.state_dim + spec.goal_dim
        actor = build_network(
            NetworkSpec(obs_dim, cfg.width, self.actor_depth, 2 * spec.action_dim),
            seed=seed_base, dtype=dtype)
        sa = build_network(
            NetworkSpec(spec.state_dim + spec.action_dim, cfg.width,
                        self.critic_depth, cfg.repr_dim),
            seed=seed_base + 1, dtype=dtype)
        g = build_network(
            NetworkSpec(spec.goal_dim, cfg.width, self.critic_depth, cfg.repr_dim),
            seed=seed_base + 2, dtype=dtype)
        self.policy = crl.GaussianPolicy(actor, spec.action_dim, spec.action_scale)
        self.critic = crl.CriticPair(sa, g, cfg.repr_dim)
        self.opt_actor = AdamState(actor.params, lr=cfg.actor_lr)
        self.opt_sa = AdamState(sa.params, lr=cfg.critic_lr)
        self.opt_g = AdamState(g.params, lr=cfg.critic_lr)
        self.env_steps = 0
        self.grad_steps = 0

    def act(self, states, goals, rng=None, deterministic=False):
        obs_states = states.astype(self.dtype)
        obs_goals = goals.astype(self.dtype)
        if self.cfg.fused_updates:
            return fastpath.act(self.policy, obs_states, obs_goals,
                                rng=rng, deterministic=deterministic)
        return crl.policy_sample(self.policy, obs_states, obs_goals,
                                 rng=rng, deterministic=deterministic)

    def update(self, batch, rng) -> dict:
        """One critic update and one actor update on `batch`."""
        cfg = self.cfg
        s = batch.states.astype(self.dtype)
        a = batch.actions.astype(self.dtype)
        g = batch.goals.astype(self.dtype)

        for store in (self.critic.sa_encoder.params, self.critic.g_encoder.params):
            store.zero_grads()
        if cfg.fused_updates:
            c_loss_val = fastpath.critic_step_grads(s, a, g, self.critic,
                                                    cfg.logsumexp_penalty)
        else:
            c_loss = crl.infonce_loss(crl.energy_matrix(s, a, g, self.critic),
                                      lam=cfg.logsumexp_penalty)
            c_loss_val = float(c_loss.data)
            if np.isfinite(c_loss_val):
                c_loss.backward()
        if not np.isfinite(c_loss_val):
            raise NonFiniteError(f"critic loss is {c_loss_val}")
        step = fastpath.adam_step if cfg.fused_updates else adam_step
        c_norm = 0.0
        for store, opt in ((self.critic.sa_encoder.params, self.opt_sa),
                           (self.critic.g_encoder.params, self.opt_g)):
            if cfg.grad_clip > 0:
                c_norm = max(c_norm, store.clip_grad_global_norm(cfg.grad_clip))
            else:
                c_norm = max(c_norm, store.grad_global_norm())
            step(store, opt)

        self.policy.actor.params.zero_grads()
        noise = rng.standard_normal((len(s), self.env_spec.action_dim)).astype(self.dtype)
        if cfg.fused_updates:
            a_loss_val = fastpath.actor_step_grads(
                s, g, self.policy, self.critic, cfg.entropy_alpha, noise)
        else:
            a_loss = crl.actor_loss(s, g, self.policy, self.critic,
                                    alpha=cfg.entropy_alpha, noise=noise)
            a_loss_val = float(a_loss.data)
            if np.isfinite(a_loss_val):
                a_loss.backward()
        if not np.isfinite(a_loss_val):
            raise NonFiniteError(f"actor loss is {a_loss_val}")
        store = self.policy.actor.params
        if cfg.grad_clip > 0:
            a_norm = store.clip_grad_global_norm(cfg.grad_clip)
        else:
            a_norm = store.grad_global_norm()
        step(store, self.opt_actor)
        self.grad_steps += 1
        return {"critic_loss": c_loss_val, "actor_loss": a_loss_val,
                "critic_grad_norm": float(c_norm), "actor_grad_norm": float(a_norm)}

    # -- persistence --------------------------------------------------------

    def _stores(self):
        return {"actor": self.policy.actor.params,
                "critic_sa": self.critic.sa_encoder.params,
                "critic_g": self.critic.g_encoder.params}

    def arrays(self) -> dict:
        out = {}
        for prefix, store in self._stores().items():
            for name, p in store.items():
                out[f"{prefix}.{name}"] = p.value
        for prefix, opt in (("actor", self.opt_actor), ("critic_sa", self.opt_sa),
                            ("critic_g", self.opt_g)):
            for name, m in opt.m.items():
                out[f"adam.{prefix}.m.{name}"] = m
            for name, v in opt.v.items():
                out[f"adam.{prefix}.v.{name}"] = v
            out[f"adam.{prefix}.t"] = np.array([opt.t], dtype=np.float64)
        return out

    def load_arrays(self, arrays: dict):
        from .nn import ShapeError
        for prefix, store in self._stores().items():
            values = {}
            for name, p in store.items():
                key = f"{prefix}.{name}"
                if key not in arrays:
                    raise CheckpointMismatchError(f"checkpoint missing entry {key}")
                v = arrays[key].astype(p.value.dtype)
                if v.shape != p.value.shape:
                    raise CheckpointMismatchError(
                        f"entry {key}: checkpoint shape {v.shape} != model "
                        f"shape {p.value.shape}")
                values[name] = v
            store.load_values(values)
        for prefix, opt in (("actor", self.opt_actor), ("critic_sa", self.opt_sa),
                            ("critic_g", self.opt_g)):
            for name in opt.m:
                mk = f"adam.{prefix}.m.{name}"
                vk = f"adam.{prefix}.v.{name}"
                if mk in arrays:
                    opt.m[name][...] = arrays[mk].astype(opt.m[name].dtype)
                if vk in arrays:
                    opt.v[name][...] = arrays[vk].astype(opt.v[name].dtype)
            tk = f"adam.{prefix}.t"
            if tk in arrays:
                opt.t = int(arrays[tk][0])


class Trainer:
    """Runs one collector agent (plus optional passive learners) to budget."""

    def __init__(self, cfg: TrainConfig, learner_depths=(), metrics_path=None,
                 train_constraint=None):
        cfg.validate()
        self.cfg = cfg
        self.train_constraint = train_constraint
        if train_constraint is None and cfg.collect_anywhere:
            # Training resets ignore start/goal regions: commanding goals all
            # over the maze gives a curriculum from nearby to distant targets,
            # while evaluation keeps the canonical start -> goal task.
            self.train_constraint = envs.SeparationConstraint(0.0, float("inf"))
        self.reset_pair_log: list[tuple] = []  # (start_xy, goal_xy) of every reset
        self.env_spec = envs.make_env(cfg.env, episode_length=cfg.episode_length,
                                      goal_radius=cfg.goal_radius)
        self.collector = Agent(cfg, self.env_spec, seed_base=cfg.seed * 1000 + 17)
        self.learners = [
            Agent(cfg, self.env_spec, seed_base=cfg.seed * 1000 + 500 + 31 * i,
                  actor_depth=d, critic_depth=d)
            for i, d in enumerate(learner_depths)]
        self.buffer = ReplayBuffer(cfg.replay_capacity, cfg.replay_min_size)
        self.collect_rng = np.random.default_rng((cfg.seed, 1))
        self.train_rngs = [np.random.default_rng((cfg.seed, 2 + i))
                           for i in range(1 + len(self.learners))]
        self.metrics_path = metrics_path
        self.metrics: list[MetricsRecord] = []
        # per-agent eval history: [collector, learner0, ...]
        self.eval_history = [[] for _ in range(1 + len(self.learners))]
        self.env_steps = 0
        self._warmup_steps = None

    @property
    def agents(self):
        return [self.collector] + self.learners

    def _goal_projection(self, states):
        return envs.goal_projection(self.env_spec, states)

    def _log_pairs(self, states, goals):
        proj = envs.goal_projection(self.env_spec, states)
        for p, g in zip(proj, goals):
            self.reset_pair_log.append((tuple(p), tuple(g)))

    def _eval_agent(self, agent: Agent, seed: int):
        def policy_fn(states, goals):
            return agent.act(states, goals, deterministic=True)
        mean, counts = envs.rollout_eval(policy_fn, self.env_spec,
                                         self.cfg.eval_episodes, seed)
        stderr = float(counts.std(ddof=1) / np.sqrt(len(counts))) if len(counts) > 1 else 0.0
        return mean, stderr

    def _emit_metrics(self, record: MetricsRecord):
        self.metrics.append(record)
        if self.metrics_path:
            with open(self.metrics_path, "a") as f:
                f.write(json.dumps(asdict(record)) + "\n")
                f.flush()

    def train(self, diagnostic_checkpoint_path=None,
              stop_at_score: float = None) -> list[MetricsRecord]:
        """Run collection/updates/evals until the step budget is spent.

        `stop_at_score` ends training early once an eval epoch reaches that
        collector score (used by threshold checks; the budget still caps it).
        """
        cfg = self.cfg
        spec = self.env_spec
        N = cfg.num_envs
        T = cfg.episode_length
        t0 = time.time()
        states, goals = envs.reset_batch(spec, N, self.collect_rng,
                                         self.train_constraint)
        self._log_pairs(states, goals)
        ep_states = [[states[i].copy()] for i in range(N)]
        ep_actions = [[] for _ in range(N)]
        step_in_ep = np.zeros(N, dtype=int)
        epoch = 0
        next_eval = cfg.epoch_env_steps
        last = {"critic_loss": float("nan"), "actor_loss": float("nan"),
                "critic_grad_norm": float("nan"), "actor_grad_norm": float("nan")}
        try:
            while self.env_steps < cfg.total_env_steps:
                if not self.buffer.ready and self.collector.grad_steps == 0:
                    # uniform-random warmup: fill the buffer with diverse
                    # trajectories before the (initially near-still) policy acts
                    actions = self.collect_rng.uniform(
                        -spec.action_scale, spec.action_scale,
                        (N, spec.action_dim)).astype(self.collector.dtype)
                else:
                    actions = self.collector.act(states, goals, rng=self.collect_rng)
                states = envs.step_batch(spec, states, actions)
                for i in range(N):
                    ep_actions[i].append(actions[i])
                    ep_states[i].append(states[i].copy())
                self.env_steps += N
                self.collector.env_steps += N
                step_in_ep += 1
                done = step_in_ep >= T
                if done.any():
                    idx = np.flatnonzero(done)
                    new_states, new_goals = envs.reset_batch(
                        spec, len(idx), self.collect_rng, self.train_constraint)
                    self._log_pairs(new_states, new_goals)
                    for k, i in enumerate(idx):
                        self.buffer.append_episode(np.stack(ep_states[i]),
                                                   np.stack(ep_actions[i]))
                        states[i] = new_states[k]
                        goals[i] = new_goals[k]
                        ep_states[i] = [states[i].copy()]
                        ep_actions[i] = []
                        step_in_ep[i] = 0

                if cfg.goal_resample_steps:
                    # switch the commanded goal on success or after a dwell
                    # limit, so single episodes chain several point-to-point
                    # legs and the replay holds long multi-segment routes
                    pos = self._goal_projection(states)
                    switch = envs.near_goal_batch(spec, states, goals) | (
                        (step_in_ep > 0)
                        & (step_in_ep % cfg.goal_resample_steps == 0))
                    if switch.any():
                        idx = np.flatnonzero(switch)
                        goals[idx] = envs.resample_goals(
                            spec, pos[idx], self.collect_rng,
                            self.train_constraint)
                        self._log_pairs(states[idx], goals[idx])

                if self.buffer.ready:
                    if self._warmup_steps is None:
                        self._warmup_steps = self.env_steps
                    target = (self.env_steps - self._warmup_steps) // cfg.utd_ratio
                    while self.collector.grad_steps < target:
                        for j, agent in enumerate(self.agents):
                            batch = self.buffer.sample_training_batch(
                                cfg.batch_size, cfg.gamma, self.train_rngs[j],
                                self._goal_projection)
                            stats = agent.update(batch, self.train_rngs[j])
                            if j == 0:
                                last = stats

                if self.env_steps >= next_eval or self.env_steps >= cfg.total_env_steps:
                    epoch += 1
                    eval_seed = hash((cfg.seed, epoch)) % (2 ** 31)
                    for j, agent in enumerate(self.agents):
                        mean, stderr = self._eval_agent(agent, eval_seed)
                        self.eval_history[j].append(mean)
                        if j == 0:
                            self._emit_metrics(MetricsRecord(
                                epoch=epoch, env_steps=self.env_steps,
                                grad_steps=self.collector.grad_steps,
                                eval_time_near_goal=mean, eval_stderr=stderr,
                                wall_seconds=time.time() - t0, **last))
                    next_eval += cfg.epoch_env_steps
                    if (stop_at_score is not None
                            and self.eval_history[0][-1] >= stop_at_score):
                        break
        except NonFiniteError:
            if diagnostic_checkpoint_path:
                self.save_checkpoint(diagnostic_checkpoint_path)
            raise
        return self.metrics

    def final_score(self, agent_index: int = 0) -> float:
        """Mean evaluation score over the last five epochs."""
        hist = self.eval_history[agent_index]
        if not hist:
            return float("nan")
        return float(np.mean(hist[-5:]))

    # -- checkpoints ---------------------------------------------------------

    def save_checkpoint(self, path: str):
        arrays = {}
        for i, agent in enumerate(self.agents):
            prefix = "agent" if i == 0 else f"learner{i - 1}"
            for k, v in agent.arrays().items():
                arrays[f"{prefix}.{k}"] = v
        arrays["meta.env_steps"] = np.array([self.env_steps], dtype=np.float64)
        arrays["meta.grad_steps"] = np.array(
            [a.grad_steps for a in self.agents], dtype=np.float64)
        rng_state = {
            "collect": self.collect_rng.bit_generator.state,
            "train": [r.bit_generator.state for r in self.train_rngs],
        }
        serialize.dump(path, arrays,
                       config_blob=config_mod.to_text(self.cfg).encode(),
                       rng_blob=json.dumps(rng_state).encode())

    def load_checkpoint(self, path: str):
        arrays, config_blob, rng_blob = serialize.load(path)
        saved_cfg = config_mod.from_text(config_blob.decode())
        for key in ("env", "width", "repr_dim", "actor_depth", "critic_depth",
                    "precision"):
            if getattr(saved_cfg, key) != getattr(self.cfg, key):
                raise CheckpointMismatchError(
                    f"config entry {key}: checkpoint has "
                    f"{getattr(saved_cfg, key)!r}, trainer has "
                    f"{getattr(self.cfg, key)!r}")
        for i, agent in enumerate(self.agents):
            prefix = "agent" if i == 0 else f"learner{i - 1}"
            sub = {k[len(prefix) + 1:]: v for k, v in arrays.items()
                   if k.startswith(prefix + ".")}
            agent.load_arrays(sub)
        self.env_steps = int(arrays["meta.env_steps"][0])
        for a, gs in zip(self.agents, arrays["meta.grad_steps"]):
            a.grad_steps = int(gs)
        if rng_blob:
            rng_state = json.loads(rng_blob.decode())
            self.collect_rng.bit_generator.state = rng_state["collect"]
            for r, st in zip(self.train_rngs, rng_state["train"]):
                r.bit_generator.state = st


def evaluate_checkpoint(path: str, env_name: str = None, n: int = 16,
                        seed: int = 0) -> float:
    """Score a saved policy with deterministic evaluation episodes."""
    if n <= 0:
        raise config_mod.ConfigError("eval episode count must be positive")
    arrays, config_blob, _ = serialize.load(path)
    cfg = config_mod.from_text(config_blob.decode())
    if env_name is not None and env_name != cfg.env:
        raise CheckpointMismatchError(
            f"checkpoint was trained on env {cfg.env!r}, requested {env_name!r}")
    trainer = Trainer(cfg)
    trainer.load_checkpoint(path)
    mean, _ = envs.rollout_eval(
        lambda s, g: trainer.collector.act(s, g, deterministic=True),
        trainer.env_spec, n, seed)
    return mean
