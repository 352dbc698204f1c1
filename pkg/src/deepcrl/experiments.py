"""Scripted ablation protocols over the desk-scale environments.

Every experiment is a collection of independent cells keyed by
(config hash, seed).  Finished cells are cached as JSON files in the output
directory, so reruns resume instead of recomputing; an aborted cell is
recorded as a NaN score and the sweep continues.  Each experiment assembles a
CSV summary at the end.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from . import config as config_mod
from .arch import NetworkSpec, param_count
from .config import TrainConfig, desk_preset
from .envs import SeparationConstraint, rollout_eval
from .trainer import Trainer

DEFAULT_BUDGET = 200_000
DEFAULT_SEEDS = 3


def _cell_hash(cfg: TrainConfig, tag: str = "") -> str:
    payload = config_mod.to_text(cfg) + tag
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _run_cached_cell(cfg: TrainConfig, out_dir: str, tag: str = "",
                     runner=None) -> dict:
    """Run one training cell (or reuse its cached result).

    `runner(cfg)` must return a JSON-serializable result dict; the default
    trains a single agent and reports its last-5-epoch mean score.
    """
    os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)
    key = _cell_hash(cfg, tag)
    cache = os.path.join(out_dir, "cells", f"{key}_s{cfg.seed}.json")
    if os.path.exists(cache):
        with open(cache) as f:
            return json.load(f)
    if runner is None:
        def runner(c):
            trainer = Trainer(c)
            trainer.train()
            return {"final_score": trainer.final_score()}
    try:
        result = runner(cfg)
    except Exception as e:  # aborted cells must not kill the sweep
        result = {"final_score": float("nan"), "error": f"{type(e).__name__}: {e}"}
    result["seed"] = cfg.seed
    result["budget"] = cfg.total_env_steps
    with open(cache, "w") as f:
        json.dump(result, f)
    return result


def _write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _base_config(env: str, budget: int, **overrides) -> TrainConfig:
    return desk_preset(env=env, total_env_steps=budget, **overrides)


def run_depth_sweep(env: str, depths=(4, 8, 16, 32, 64), seeds=DEFAULT_SEEDS,
                    budget=DEFAULT_BUDGET, out_dir="out/depth_sweep",
                    **config_overrides) -> str:
    """Train per (depth, seed); CSV columns depth, seed, budget, final_score."""
    for d in depths:
        if d % 4:
            raise config_mod.ConfigError(f"depth {d} is not a multiple of 4")
    rows = []
    for depth in sorted(depths):
        for seed in range(seeds):
            cfg = _base_config(env, budget, actor_depth=depth, critic_depth=depth,
                               seed=seed, **config_overrides)
            res = _run_cached_cell(cfg, out_dir, tag="depth_sweep")
            rows.append([depth, seed, budget, res["final_score"]])
    return _write_csv(os.path.join(out_dir, "depth_sweep.csv"),
                      ["depth", "seed", "budget", "final_score"], rows)


def run_width_depth_pareto(env: str, widths=(64, 128, 256), depths=(4, 8, 16, 32),
                           seeds=DEFAULT_SEEDS, budget=DEFAULT_BUDGET,
                           fixed_width=64, out_dir="out/pareto",
                           **config_overrides) -> str:
    """Width ladder at depth 4 vs depth ladder at a fixed width."""
    config_overrides.pop("width", None)  # the sweep owns the width axis
    cells = [(w, 4) for w in widths]
    cells += [(fixed_width, d) for d in depths if (fixed_width, d) not in cells]
    rows = []
    from .envs import make_env
    env_spec = make_env(env)
    for width, depth in cells:
        # count the state-action critic encoder, the largest of the three nets
        n_params = param_count(NetworkSpec(
            env_spec.state_dim + env_spec.action_dim, width, depth,
            TrainConfig().repr_dim))
        for seed in range(seeds):
            cfg = _base_config(env, budget, actor_depth=depth, critic_depth=depth,
                               width=width, seed=seed, **config_overrides)
            res = _run_cached_cell(cfg, out_dir, tag="pareto")
            rows.append([width, depth, seed, budget, n_params, res["final_score"]])
    return _write_csv(os.path.join(out_dir, "pareto.csv"),
                      ["width", "depth", "seed", "budget", "param_count",
                       "final_score"], rows)


def run_actor_critic_grid(env: str, actor_depths=(4, 16), critic_depths=(4, 16),
                          seeds=DEFAULT_SEEDS, budget=DEFAULT_BUDGET,
                          out_dir="out/actor_critic_grid",
                          **config_overrides) -> str:
    """Independent actor-depth x critic-depth grid of final scores."""
    rows = []
    for ad in sorted(actor_depths):
        for cd in sorted(critic_depths):
            for seed in range(seeds):
                cfg = _base_config(env, budget, actor_depth=ad, critic_depth=cd,
                                   seed=seed, **config_overrides)
                res = _run_cached_cell(cfg, out_dir, tag="actor_critic_grid")
                rows.append([ad, cd, seed, budget, res["final_score"]])
    return _write_csv(os.path.join(out_dir, "actor_critic_grid.csv"),
                      ["actor_depth", "critic_depth", "seed", "budget",
                       "final_score"], rows)


def run_batch_depth_grid(env: str, batch_sizes=(256, 512, 1024), depths=(4, 16),
                         seeds=DEFAULT_SEEDS, budget=DEFAULT_BUDGET,
                         out_dir="out/batch_grid", **config_overrides) -> str:
    """Batch-size x depth grid; everything else from the desk preset."""
    rows = []
    for batch in sorted(batch_sizes):
        for depth in sorted(depths):
            for seed in range(seeds):
                cfg = _base_config(env, budget, actor_depth=depth,
                                   critic_depth=depth, batch_size=batch,
                                   seed=seed, **config_overrides)
                res = _run_cached_cell(cfg, out_dir, tag="batch_grid")
                rows.append([batch, depth, seed, budget, res["final_score"]])
    return _write_csv(os.path.join(out_dir, "batch_grid.csv"),
                      ["batch_size", "depth", "seed", "budget", "final_score"], rows)


def run_collector_experiment(env: str, collector_depth=32, learner_depths=(4, 32),
                             seeds=DEFAULT_SEEDS, budget=DEFAULT_BUDGET,
                             out_dir="out/collector", **config_overrides) -> str:
    """One acting collector plus passive learners sharing its replay buffer.

    All networks train at equal UTD; learners never step the environment.
    CSV columns: role, depth, seed, budget, final_score, env_steps.
    """
    rows = []
    for seed in range(seeds):
        cfg = _base_config(env, budget, actor_depth=collector_depth,
                           critic_depth=collector_depth, seed=seed,
                           **config_overrides)

        def runner(c):
            trainer = Trainer(c, learner_depths=list(learner_depths))
            trainer.train()
            out = {"final_score": trainer.final_score(0),
                   "collector_env_steps": trainer.collector.env_steps}
            for i, d in enumerate(learner_depths):
                out[f"learner{i}_score"] = trainer.final_score(1 + i)
                out[f"learner{i}_env_steps"] = trainer.learners[i].env_steps
            return out

        res = _run_cached_cell(cfg, out_dir,
                               tag=f"collector:{list(learner_depths)}", runner=runner)
        rows.append(["collector", collector_depth, seed, budget,
                     res["final_score"], res.get("collector_env_steps", np.nan)])
        for i, d in enumerate(learner_depths):
            rows.append([f"learner{i}", d, seed, budget,
                         res.get(f"learner{i}_score", np.nan),
                         res.get(f"learner{i}_env_steps", np.nan)])
    return _write_csv(os.path.join(out_dir, "collector.csv"),
                      ["role", "depth", "seed", "budget", "final_score",
                       "env_steps"], rows)


def run_generalization(env: str = "point_big_maze", train_sep=3.0,
                       eval_seps=(4, 5, 6), depths=(4, 16), seeds=DEFAULT_SEEDS,
                       budget=DEFAULT_BUDGET, out_dir="out/generalization",
                       **config_overrides) -> str:
    """Train on near pairs (separation <= train_sep), evaluate on far buckets.

    Eval bucket k holds pairs with separation in (k-1, k], so buckets never
    overlap the training range.  Also audits the training-pair log.
    """
    if min(eval_seps) <= train_sep:
        raise config_mod.ConfigError("eval buckets must lie beyond train_sep")
    rows = []
    for depth in sorted(depths):
        for seed in range(seeds):
            cfg = _base_config(env, budget, actor_depth=depth, critic_depth=depth,
                               seed=seed, **config_overrides)

            def runner(c):
                constraint = SeparationConstraint(0.0, train_sep)
                trainer = Trainer(c, train_constraint=constraint)
                trainer.train()
                max_sep = max(
                    float(np.linalg.norm(np.array(p) - np.array(g)))
                    for p, g in trainer.reset_pair_log)
                out = {"final_score": trainer.final_score(),
                       "max_train_separation": max_sep}
                for k in eval_seps:
                    bucket = SeparationConstraint(float(k) - 1.0, float(k))
                    mean, _ = rollout_eval(
                        lambda s, g: trainer.collector.act(s, g, deterministic=True),
                        trainer.env_spec, c.eval_episodes, seed=10_000 + k,
                        constraint=bucket)
                    out[f"eval_sep{k}"] = mean
                return out

            res = _run_cached_cell(cfg, out_dir,
                                   tag=f"generalization:{train_sep}:{list(eval_seps)}",
                                   runner=runner)
            for k in eval_seps:
                rows.append([depth, seed, budget, k,
                             res.get(f"eval_sep{k}", np.nan),
                             res.get("max_train_separation", np.nan)])
    return _write_csv(os.path.join(out_dir, "generalization.csv"),
                      ["depth", "seed", "budget", "eval_sep", "score",
                       "max_train_separation"], rows)
