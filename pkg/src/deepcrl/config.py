"""Experiment configuration: flat key-value text files plus CLI overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    env: str = "point_reach"
    actor_depth: int = 4
    critic_depth: int = 4
    width: int = 256
    repr_dim: int = 64
    batch_size: int = 512
    num_envs: int = 64
    gamma: float = 0.99
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    logsumexp_penalty: float = 0.1
    entropy_alpha: float = 0.001
    utd_ratio: int = 40
    total_env_steps: int = 200_000
    eval_every: int = 0          # 0 -> total_env_steps // 50
    eval_episodes: int = 16
    episode_length: int = 200
    goal_radius: float = 0.5
    replay_capacity: int = 1_000_000
    replay_min_size: int = 10_000
    grad_clip: float = 10.0      # 0 disables
    collect_anywhere: bool = True  # training resets sample all free cells
    goal_resample_steps: int = 50  # collector goal dwell limit; 0 disables
    precision: str = "float32"
    fused_updates: bool = True   # closed-form backward; tape engine if False
    seed: int = 0

    def validate(self):
        if self.actor_depth % 4 or self.critic_depth % 4:
            raise ConfigError("actor_depth and critic_depth must be multiples of 4")
        if self.actor_depth <= 0 or self.critic_depth <= 0:
            raise ConfigError("depths must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64: {self.precision}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (in-batch negatives)")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must be in [0, 1)")
        if self.utd_ratio < 1 or self.num_envs < 1 or self.total_env_steps < 1:
            raise ConfigError("utd_ratio, num_envs, total_env_steps must be positive")
        return self

    @property
    def epoch_env_steps(self) -> int:
        return self.eval_every if self.eval_every > 0 else max(
            self.total_env_steps // 50, 1)


def desk_preset(**overrides) -> TrainConfig:
    """Desk-scale defaults: small nets, short episodes, modest batch.

    The update-to-data ratio is much denser than the faithful-scale preset
    (1:8 instead of 1:40) because desk budgets are ~500x shorter.
    """
    cfg = TrainConfig(width=64, batch_size=128, num_envs=64, utd_ratio=8,
                      episode_length=200, replay_capacity=200_000,
                      replay_min_size=10_000)
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown config key: {k}")
        setattr(cfg, k, v)
    return cfg.validate()


def table3_preset(**overrides) -> TrainConfig:
    """Faithful-scale settings from the original hyperparameter table.

    max/min replay sizes there are interpreted as thousands of transitions
    (512 parallel envs, 1000-step episodes).
    """
    cfg = TrainConfig(width=256, batch_size=512, num_envs=512,
                      episode_length=1000, replay_capacity=10_000_000,
                      replay_min_size=1_000_000, total_env_steps=100_000_000)
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise ConfigError(f"unknown config key: {k}")
        setattr(cfg, k, v)
    return cfg.validate()


def to_text(cfg: TrainConfig) -> str:
    lines = [f"{k} = {v}" for k, v in asdict(cfg).items()]
    return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            return raw.lower() in ("1", "true", "yes")
        return target_type(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for {name}: {raw!r}") from e


def from_text(text: str, base: TrainConfig = None) -> TrainConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys error."""
    cfg = TrainConfig(**asdict(base)) if base else TrainConfig()
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, types[key]))
    return cfg.validate()


def load(path: str, base: TrainConfig = None) -> TrainConfig:
    with open(path) as f:
        return from_text(f.read(), base)


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    """Apply {key: string-or-typed value} on top of cfg (CLI flags)."""
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    for key, val in overrides.items():
        if key not in types:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(val, str):
            val = _coerce(key, val, types[key])
        setattr(cfg, key, val)
    return cfg.validate()
