"""Command-line entry points: training, evaluation, sweeps, and exporters.

Every training-style subcommand reads an optional config file and then applies
any `--key value` overrides with the same names as the config fields.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import config as config_mod
from . import envs, experiments, serialize, viz
from .config import TrainConfig
from .trainer import Trainer, evaluate_checkpoint


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key = value config file")
    for f in fields(TrainConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            metavar="V", help=argparse.SUPPRESS)


def _resolve_config(args, base: TrainConfig = None) -> TrainConfig:
    cfg = base if base is not None else config_mod.desk_preset()
    if args.config:
        cfg = config_mod.load(args.config, base=cfg)
    overrides = {f.name: getattr(args, f.name) for f in fields(TrainConfig)
                 if getattr(args, f.name, None) is not None}
    return config_mod.apply_overrides(cfg, overrides)


def _add_sweep_flags(parser: argparse.ArgumentParser, default_env: str,
                     default_out: str):
    parser.add_argument("--env", default=default_env)
    parser.add_argument("--seeds", type=int, default=experiments.DEFAULT_SEEDS)
    parser.add_argument("--budget", type=int, default=experiments.DEFAULT_BUDGET)
    parser.add_argument("--out-dir", default=default_out)


def _int_list(text: str):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _load_agent(checkpoint: str):
    arrays, config_blob, _ = serialize.load(checkpoint)
    cfg = config_mod.from_text(config_blob.decode())
    trainer = Trainer(cfg)
    trainer.load_checkpoint(checkpoint)
    return trainer


# -- subcommand handlers ------------------------------------------------------

def _cmd_train(args):
    cfg = _resolve_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    metrics = os.path.join(args.out_dir, "metrics.jsonl")
    trainer = Trainer(cfg, metrics_path=metrics)
    ckpt = os.path.join(args.out_dir, "checkpoint.dcrl")
    if args.resume and os.path.exists(ckpt):
        trainer.load_checkpoint(ckpt)
    trainer.train()
    trainer.save_checkpoint(ckpt)
    with open(os.path.join(args.out_dir, "config.txt"), "w") as f:
        f.write(config_mod.to_text(cfg))
    print(f"final_score {trainer.final_score():.3f}")
    print(f"checkpoint {ckpt}")
    return 0


def _cmd_evaluate(args):
    score = evaluate_checkpoint(args.checkpoint, env_name=args.env,
                                n=args.episodes, seed=args.seed)
    print(f"time_near_goal {score:.3f}")
    return 0


def _cmd_sweep_depth(args):
    path = experiments.run_depth_sweep(
        args.env, depths=_int_list(args.depths), seeds=args.seeds,
        budget=args.budget, out_dir=args.out_dir)
    print(path)
    return 0


def _cmd_pareto(args):
    path = experiments.run_width_depth_pareto(
        args.env, widths=_int_list(args.widths), depths=_int_list(args.depths),
        fixed_width=args.fixed_width, seeds=args.seeds, budget=args.budget,
        out_dir=args.out_dir)
    print(path)
    return 0


def _cmd_actor_critic_grid(args):
    path = experiments.run_actor_critic_grid(
        args.env, actor_depths=_int_list(args.actor_depths),
        critic_depths=_int_list(args.critic_depths), seeds=args.seeds,
        budget=args.budget, out_dir=args.out_dir)
    print(path)
    return 0


def _cmd_batch_grid(args):
    path = experiments.run_batch_depth_grid(
        args.env, batch_sizes=_int_list(args.batch_sizes),
        depths=_int_list(args.depths), seeds=args.seeds, budget=args.budget,
        out_dir=args.out_dir)
    print(path)
    return 0


def _cmd_collector(args):
    path = experiments.run_collector_experiment(
        args.env, collector_depth=args.collector_depth,
        learner_depths=_int_list(args.learner_depths), seeds=args.seeds,
        budget=args.budget, out_dir=args.out_dir)
    print(path)
    return 0


def _cmd_generalization(args):
    path = experiments.run_generalization(
        args.env, train_sep=args.train_sep, eval_seps=_int_list(args.eval_seps),
        depths=_int_list(args.depths), seeds=args.seeds, budget=args.budget,
        out_dir=args.out_dir)
    print(path)
    return 0


def _cmd_q_grid(args):
    trainer = _load_agent(args.checkpoint)
    goal = np.array([float(v) for v in args.goal.split(",")])
    rows = viz.q_grid(trainer.collector, trainer.env_spec, goal,
                      args.resolution)
    viz.write_csv(args.out, ["x", "y", "energy"], rows)
    print(args.out)
    return 0


def _cmd_pca(args):
    trainer = _load_agent(args.checkpoint)
    spec = trainer.env_spec
    rng = np.random.default_rng(args.seed)
    states, _ = envs.reset_batch(spec, args.samples, rng)
    actions = rng.uniform(-1.0, 1.0, size=(args.samples, spec.action_dim))
    sa = np.concatenate([states, actions], axis=1).astype(trainer.collector.dtype)
    emb = trainer.collector.critic.sa_encoder.forward(sa, grad=False).data
    coords, fractions = viz.pca_project(emb, k=args.components)
    header = [f"pc{i}" for i in range(args.components)]
    viz.write_csv(args.out, header, [list(map(float, c)) for c in coords])
    print(" ".join(f"{f:.4f}" for f in fractions))
    print(args.out)
    return 0


def _cmd_resnorms(args):
    trainer = _load_agent(args.checkpoint)
    spec = trainer.env_spec
    rng = np.random.default_rng(args.seed)
    states, goals = envs.reset_batch(spec, args.samples, rng)
    actions = rng.uniform(-1.0, 1.0, size=(args.samples, spec.action_dim))
    rows = viz.residual_norm_profile(trainer.collector, states, actions, goals)
    viz.write_csv(args.out, ["network", "block_index", "mean_norm"], rows)
    print(args.out)
    return 0


def _cmd_plot(args):
    axes = {"x": args.x, "y": args.y}
    if args.group:
        axes["group"] = args.group
    if args.value:
        axes["value"] = args.value
    svg = viz.emit_plot(args.csv, args.kind, axes)
    with open(args.out, "w") as f:
        f.write(svg)
    print(args.out)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepcrl",
        description="Contrastive RL with deep residual networks on analytic "
                    "goal-conditioned environments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent")
    _add_config_flags(p)
    p.add_argument("--out-dir", default="out/train")
    p.add_argument("--resume", action="store_true",
                   help="continue from out-dir checkpoint if present")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep-depth", help="depth ablation sweep")
    _add_sweep_flags(p, "point_u_maze", "out/depth_sweep")
    p.add_argument("--depths", default="4,8,16,32,64")
    p.set_defaults(func=_cmd_sweep_depth)

    p = sub.add_parser("pareto", help="width-vs-depth parameter pareto")
    _add_sweep_flags(p, "point_u_maze", "out/pareto")
    p.add_argument("--widths", default="64,128,256")
    p.add_argument("--depths", default="4,8,16,32")
    p.add_argument("--fixed-width", type=int, default=64)
    p.set_defaults(func=_cmd_pareto)

    p = sub.add_parser("actor-critic-grid", help="actor x critic depth grid")
    _add_sweep_flags(p, "point_u_maze", "out/actor_critic_grid")
    p.add_argument("--actor-depths", default="4,16")
    p.add_argument("--critic-depths", default="4,16")
    p.set_defaults(func=_cmd_actor_critic_grid)

    p = sub.add_parser("batch-grid", help="batch-size x depth grid")
    _add_sweep_flags(p, "point_u_maze", "out/batch_grid")
    p.add_argument("--batch-sizes", default="256,512,1024")
    p.add_argument("--depths", default="4,16")
    p.set_defaults(func=_cmd_batch_grid)

    p = sub.add_parser("collector", help="collector/passive-learner protocol")
    _add_sweep_flags(p, "point_u_maze", "out/collector")
    p.add_argument("--collector-depth", type=int, default=32)
    p.add_argument("--learner-depths", default="4,32")
    p.set_defaults(func=_cmd_collector)

    p = sub.add_parser("generalization", help="train near, evaluate far")
    _add_sweep_flags(p, "point_big_maze", "out/generalization")
    p.add_argument("--train-sep", type=float, default=3.0)
    p.add_argument("--eval-seps", default="4,5,6")
    p.add_argument("--depths", default="4,16")
    p.set_defaults(func=_cmd_generalization)

    p = sub.add_parser("q-grid", help="critic energy grid CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--goal", required=True, metavar="X,Y")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--out", default="q_grid.csv")
    p.set_defaults(func=_cmd_q_grid)

    p = sub.add_parser("pca", help="state-action embedding PCA CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=512)
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="pca.csv")
    p.set_defaults(func=_cmd_pca)

    p = sub.add_parser("resnorms", help="residual branch norm profile CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="resnorms.csv")
    p.set_defaults(func=_cmd_resnorms)

    p = sub.add_parser("plot", help="render a CSV as an SVG plot")
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", choices=("line", "heatmap"), default="line")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--group", default=None)
    p.add_argument("--value", default=None, help="heatmap cell value column")
    p.add_argument("--out", default="plot.svg")
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (config_mod.ConfigError, envs.ConfigError, viz.SchemaError,
            serialize.CheckpointError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
