import json

import numpy as np
import pytest

from deepcrl import config as config_mod
from deepcrl.config import ConfigError, TrainConfig, desk_preset, table3_preset
from deepcrl.serialize import CheckpointError
from deepcrl.trainer import CheckpointMismatchError, Trainer, evaluate_checkpoint


def tiny_config(**overrides):
    base = dict(env="point_reach", actor_depth=4, critic_depth=4, width=8,
                repr_dim=8, batch_size=16, num_envs=8, episode_length=30,
                total_env_steps=2_000, replay_capacity=10_000,
                replay_min_size=200, eval_episodes=2, eval_every=1_000, seed=3)
    base.update(overrides)
    return TrainConfig(**base).validate()


class TestConfig:
    def test_roundtrip_text(self):
        cfg = tiny_config()
        text = config_mod.to_text(cfg)
        parsed = config_mod.from_text(text)
        assert parsed == cfg

    def test_comments_and_unknown_keys(self):
        cfg = config_mod.from_text("width = 32  # hidden units\n\nseed = 7\n")
        assert cfg.width == 32 and cfg.seed == 7
        with pytest.raises(ConfigError, match="unknown config key"):
            config_mod.from_text("widht = 32\n")

    def test_depth_constraint(self):
        with pytest.raises(ConfigError):
            TrainConfig(actor_depth=6).validate()

    def test_overrides(self):
        cfg = config_mod.apply_overrides(tiny_config(), {"gamma": "0.95"})
        assert cfg.gamma == 0.95
        with pytest.raises(ConfigError):
            config_mod.apply_overrides(tiny_config(), {"nope": "1"})

    def test_presets(self):
        desk = desk_preset()
        assert desk.num_envs == 64 and desk.episode_length == 200
        faithful = table3_preset()
        assert faithful.batch_size == 512 and faithful.num_envs == 512
        assert faithful.episode_length == 1000

    def test_extreme_actor_depth_warns(self):
        from deepcrl.trainer import Agent
        from deepcrl import envs
        cfg = tiny_config(actor_depth=1024)
        with pytest.warns(UserWarning, match="critic"):
            Agent(cfg, envs.make_env("point_reach"), seed_base=0)


class TestTrainLoop:
    def test_utd_accounting_and_metrics(self, tmp_path):
        metrics_path = str(tmp_path / "metrics.jsonl")
        cfg = tiny_config()
        trainer = Trainer(cfg, metrics_path=metrics_path)
        records = trainer.train()
        assert trainer.env_steps >= cfg.total_env_steps
        # 1 grad step per utd_ratio steps after warmup, within one chunk
        post = trainer.env_steps - trainer._warmup_steps
        assert abs(trainer.collector.grad_steps * cfg.utd_ratio - post) <= cfg.num_envs * cfg.utd_ratio
        assert len(records) >= 2
        steps = [r.env_steps for r in records]
        assert steps == sorted(steps)
        with open(metrics_path) as f:
            lines = [json.loads(line) for line in f]
        assert len(lines) == len(records)
        assert lines[0]["eval_time_near_goal"] == records[0].eval_time_near_goal

    def test_exact_utd_ratio(self):
        # with warmup at a multiple of num_envs, grad steps track env steps / utd
        cfg = tiny_config(utd_ratio=10, total_env_steps=1_000, replay_min_size=160)
        trainer = Trainer(cfg)
        trainer.train()
        assert trainer.collector.grad_steps == (trainer.env_steps - trainer._warmup_steps) // 10

    def test_deterministic_metrics_stream(self):
        runs = []
        for _ in range(2):
            trainer = Trainer(tiny_config())
            records = trainer.train()
            runs.append([(r.env_steps, r.eval_time_near_goal, r.critic_loss,
                          r.actor_loss) for r in records])
        assert runs[0] == runs[1]

    def test_learners_never_step_env(self):
        cfg = tiny_config()
        trainer = Trainer(cfg, learner_depths=[4, 8])
        trainer.train()
        assert trainer.collector.env_steps == trainer.env_steps
        for learner in trainer.learners:
            assert learner.env_steps == 0
            assert learner.grad_steps == trainer.collector.grad_steps
        assert all(len(h) == len(trainer.eval_history[0])
                   for h in trainer.eval_history)

    def test_final_score_last_five(self):
        trainer = Trainer(tiny_config(eval_every=200))
        trainer.train()
        hist = trainer.eval_history[0]
        assert trainer.final_score() == pytest.approx(np.mean(hist[-5:]))


class TestCheckpoint:
    def test_roundtrip_evaluation_identical(self, tmp_path):
        cfg = tiny_config()
        trainer = Trainer(cfg)
        trainer.train()
        path = str(tmp_path / "ckpt.bin")
        before, _ = trainer._eval_agent(trainer.collector, seed=99)
        trainer.save_checkpoint(path)
        again = evaluate_checkpoint(path, n=cfg.eval_episodes, seed=99)
        assert again == before

        fresh = Trainer(cfg)
        fresh.load_checkpoint(path)
        after, _ = fresh._eval_agent(fresh.collector, seed=99)
        assert after == before
        assert fresh.env_steps == trainer.env_steps
        # parameters restored bit-exactly
        for k, p in trainer.collector.policy.actor.params.items():
            assert np.array_equal(p.value, fresh.collector.policy.actor.params[k].value)

    def test_truncated_file_rejected(self, tmp_path):
        cfg = tiny_config(total_env_steps=400)
        trainer = Trainer(cfg)
        trainer.train()
        path = str(tmp_path / "ckpt.bin")
        trainer.save_checkpoint(path)
        with open(path, "rb") as f:
            raw = f.read()
        with open(path, "wb") as f:
            f.write(raw[: len(raw) // 2])
        fresh = Trainer(cfg)
        snapshot = fresh.collector.policy.actor.params.copy_values()
        with pytest.raises(CheckpointError):
            fresh.load_checkpoint(path)
        for k, v in snapshot.items():  # no partial mutation
            assert np.array_equal(v, fresh.collector.policy.actor.params[k].value)

    def test_garbled_magic_rejected(self, tmp_path):
        path = str(tmp_path / "ckpt.bin")
        with open(path, "wb") as f:
            f.write(b"LRCD" + b"\x00" * 64)
        cfg = tiny_config()
        with pytest.raises(CheckpointError):
            Trainer(cfg).load_checkpoint(path)

    def test_cross_config_load_names_entry(self, tmp_path):
        cfg = tiny_config(total_env_steps=400)
        trainer = Trainer(cfg)
        trainer.train()
        path = str(tmp_path / "ckpt.bin")
        trainer.save_checkpoint(path)
        other = Trainer(tiny_config(width=16))
        with pytest.raises(CheckpointMismatchError, match="width"):
            other.load_checkpoint(path)

    def test_evaluate_requires_positive_n(self, tmp_path):
        cfg = tiny_config(total_env_steps=400)
        trainer = Trainer(cfg)
        trainer.train()
        path = str(tmp_path / "ckpt.bin")
        trainer.save_checkpoint(path)
        with pytest.raises(ConfigError):
            evaluate_checkpoint(path, n=0)

    def test_env_mismatch(self, tmp_path):
        cfg = tiny_config(total_env_steps=400)
        trainer = Trainer(cfg)
        trainer.train()
        path = str(tmp_path / "ckpt.bin")
        trainer.save_checkpoint(path)
        with pytest.raises(CheckpointMismatchError):
            evaluate_checkpoint(path, env_name="point_u_maze", n=2)
