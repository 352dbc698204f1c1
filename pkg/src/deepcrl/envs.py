"""Analytic goal-conditioned environments: point-mass mazes and a two-link arm.

Mazes are plain-text grids ('#' wall, '.' free, 'S' start region, 'G' goal
region) with unit cells; the point agent is a damped double integrator that
slides along walls.  The arm is torque-controlled with the fingertip position
as the goal space.  All dynamics are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SeparationConstraint:
    """Keep only (start, goal) pairs with Euclidean separation in (min, max]."""
    min_sep: float
    max_sep: float
    ignore_regions: bool = True  # sample both endpoints from all free cells


@dataclass
class EnvSpec:
    name: str
    kind: str                  # "point" | "arm"
    state_dim: int
    action_dim: int
    goal_dim: int
    episode_length: int = 200
    goal_radius: float = 0.5
    action_scale: float = 1.0
    # point dynamics
    dt: float = 0.05
    damping: float = 0.1
    v_max: float = 2.0
    accel_gain: float = 8.0
    walls: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    free_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    start_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    goal_cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    extent: tuple = (0.0, 0.0, 1.0, 1.0)  # (xmin, ymin, xmax, ymax)
    # arm dynamics
    link_lengths: tuple = (1.0, 1.0)
    torque_gain: float = 4.0
    omega_max: float = 3.0

    def validate(self):
        if self.goal_radius <= 0:
            raise ConfigError("goal_radius must be > 0")
        if self.episode_length < 2:
            raise ConfigError("episode_length must be >= 2")
        if self.walls.size and np.any(self.walls[:, 2:] <= self.walls[:, :2]):
            raise ConfigError("degenerate wall rectangle")


def parse_maze(text: str):
    """Grid text -> (walls (M,4), free/start/goal cell centers, extent)."""
    rows = [line for line in text.rstrip("\n").splitlines() if line]
    height = len(rows)
    width = max(len(r) for r in rows)
    walls, free, start, goal = [], [], [], []
    for r, line in enumerate(rows):
        y = height - 1 - r  # first text row is the top of the maze
        for c in range(width):
            ch = line[c] if c < len(line) else "#"
            x = float(c)
            if ch == "#":
                walls.append((x, y, x + 1.0, y + 1.0))
            else:
                center = (x + 0.5, y + 0.5)
                free.append(center)
                if ch == "S":
                    start.append(center)
                elif ch == "G":
                    goal.append(center)
                elif ch != ".":
                    raise ConfigError(f"unknown maze cell {ch!r}")
    return (np.array(walls, dtype=np.float64),
            np.array(free, dtype=np.float64),
            np.array(start, dtype=np.float64),
            np.array(goal, dtype=np.float64),
            (0.0, 0.0, float(width), float(height)))


def load_maze(name: str):
    text = resources.files("deepcrl.mazes").joinpath(f"{name}.txt").read_text()
    return parse_maze(text)


_MAZE_ENVS = {
    "point_reach": "point_reach",
    "point_u_maze": "u_maze",
    "point_u4_maze": "u4_maze",
    "point_u5_maze": "u5_maze",
    "point_big_maze": "big_maze",
}


def make_env(name: str, **overrides) -> EnvSpec:
    if name in _MAZE_ENVS:
        walls, free, start, goal, extent = load_maze(_MAZE_ENVS[name])
        spec = EnvSpec(name=name, kind="point", state_dim=4, action_dim=2,
                       goal_dim=2, walls=walls, free_cells=free,
                       start_cells=start, goal_cells=goal, extent=extent)
    elif name == "arm_reach":
        spec = EnvSpec(name=name, kind="arm", state_dim=6, action_dim=2, goal_dim=2)
    else:
        raise ConfigError(f"unknown environment: {name}")
    for k, v in overrides.items():
        if not hasattr(spec, k):
            raise ConfigError(f"unknown env option: {k}")
        setattr(spec, k, v)
    spec.validate()
    return spec


def goal_projection(spec: EnvSpec, states: np.ndarray) -> np.ndarray:
    """State -> goal-space mapping (position / fingertip dimensions)."""
    states = np.asarray(states)
    if spec.kind == "point":
        return states[..., :2]
    return states[..., 4:6]


# -- point-mass geometry -----------------------------------------------------

def _inside_wall(spec: EnvSpec, pos: np.ndarray) -> np.ndarray:
    """True where a position lies strictly inside any wall rectangle."""
    if spec.walls.shape[0] == 0:
        return np.zeros(pos.shape[0], dtype=bool)
    x = pos[:, 0:1]
    y = pos[:, 1:2]
    w = spec.walls
    hit = (x > w[:, 0]) & (x < w[:, 2]) & (y > w[:, 1]) & (y < w[:, 3])
    return hit.any(axis=1)


def _sample_positions(spec: EnvSpec, cells: np.ndarray, n: int, rng) -> np.ndarray:
    idx = rng.integers(0, len(cells), size=n)
    # keep a small margin from cell edges so spawns never touch a wall face
    offset = rng.uniform(-0.4, 0.4, size=(n, 2))
    return cells[idx] + offset


def _fingertip(theta: np.ndarray, lengths) -> np.ndarray:
    l1, l2 = lengths
    x = l1 * np.cos(theta[..., 0]) + l2 * np.cos(theta[..., 0] + theta[..., 1])
    y = l1 * np.sin(theta[..., 0]) + l2 * np.sin(theta[..., 0] + theta[..., 1])
    return np.stack([x, y], axis=-1)


# -- reset -------------------------------------------------------------------

def reset_batch(spec: EnvSpec, n: int, rng, constraint: SeparationConstraint = None):
    """Sample n (state, goal) pairs; constraint filters by Euclidean separation."""
    if spec.kind == "point":
        start_cells = spec.start_cells if len(spec.start_cells) else spec.free_cells
        goal_cells = spec.goal_cells if len(spec.goal_cells) else spec.free_cells
        if constraint is not None and constraint.ignore_regions:
            start_cells = goal_cells = spec.free_cells
        starts = np.empty((n, 2))
        goals = np.empty((n, 2))
        filled = 0
        for _ in range(10_000):
            if filled >= n:
                break
            m = n - filled
            s = _sample_positions(spec, start_cells, m, rng)
            g = _sample_positions(spec, goal_cells, m, rng)
            if constraint is not None:
                sep = np.linalg.norm(s - g, axis=1)
                ok = (sep > constraint.min_sep) & (sep <= constraint.max_sep)
            else:
                ok = np.ones(m, dtype=bool)
            k = int(ok.sum())
            starts[filled:filled + k] = s[ok]
            goals[filled:filled + k] = g[ok]
            filled += k
        else:
            raise ConfigError(
                f"could not satisfy separation constraint {constraint} in {spec.name}")
        states = np.concatenate([starts, np.zeros((n, 2))], axis=1)
        return states, goals
    # arm: uniform joint angles at rest; goal = fingertip of a second draw
    theta = rng.uniform(-np.pi, np.pi, size=(n, 2))
    tip = _fingertip(theta, spec.link_lengths)
    states = np.concatenate([theta, np.zeros((n, 2)), tip], axis=1)
    goal_theta = rng.uniform(-np.pi, np.pi, size=(n, 2))
    goals = _fingertip(goal_theta, spec.link_lengths)
    if constraint is not None:
        for _ in range(10_000):
            sep = np.linalg.norm(tip - goals, axis=1)
            bad = ~((sep > constraint.min_sep) & (sep <= constraint.max_sep))
            if not bad.any():
                break
            redraw = rng.uniform(-np.pi, np.pi, size=(int(bad.sum()), 2))
            goals[bad] = _fingertip(redraw, spec.link_lengths)
        else:
            raise ConfigError(
                f"could not satisfy separation constraint {constraint} in {spec.name}")
    return states, goals


def resample_goals(spec: EnvSpec, positions: np.ndarray, rng,
                   constraint: SeparationConstraint = None) -> np.ndarray:
    """Fresh commanded goals for envs mid-episode.

    `positions` are current goal-space positions; any separation constraint is
    enforced against them, so switched goals obey the same training-pair
    restrictions as reset-time goals.
    """
    n = positions.shape[0]
    if spec.kind == "point":
        cells = spec.goal_cells if len(spec.goal_cells) else spec.free_cells
        if constraint is not None and constraint.ignore_regions:
            cells = spec.free_cells
        goals = np.empty((n, 2))
        pending = np.arange(n)
        for _ in range(10_000):
            if not len(pending):
                return goals
            g = _sample_positions(spec, cells, len(pending), rng)
            if constraint is not None:
                sep = np.linalg.norm(g - positions[pending], axis=1)
                ok = (sep > constraint.min_sep) & (sep <= constraint.max_sep)
            else:
                ok = np.ones(len(pending), dtype=bool)
            goals[pending[ok]] = g[ok]
            pending = pending[~ok]
        raise ConfigError(
            f"could not satisfy separation constraint {constraint} in {spec.name}")
    goals = np.empty((n, 2))
    pending = np.arange(n)
    for _ in range(10_000):
        if not len(pending):
            return goals
        theta = rng.uniform(-np.pi, np.pi, size=(len(pending), 2))
        g = _fingertip(theta, spec.link_lengths)
        if constraint is not None:
            sep = np.linalg.norm(g - positions[pending], axis=1)
            ok = (sep > constraint.min_sep) & (sep <= constraint.max_sep)
        else:
            ok = np.ones(len(pending), dtype=bool)
        goals[pending[ok]] = g[ok]
        pending = pending[~ok]
    raise ConfigError(
        f"could not satisfy separation constraint {constraint} in {spec.name}")


def reset(spec: EnvSpec, seed=None, constraint: SeparationConstraint = None, rng=None):
    if rng is None:
        rng = np.random.default_rng(seed)
    states, goals = reset_batch(spec, 1, rng, constraint)
    return states[0], goals[0]


# -- step --------------------------------------------------------------------

def step_batch(spec: EnvSpec, states: np.ndarray, actions: np.ndarray):
    """Deterministic batched dynamics -> (next_states, rewards, near_goal).

    near_goal compares the goal projection of the NEXT state against the goal,
    so callers must pass goals separately via `near_goal_batch`.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.clip(np.asarray(actions, dtype=np.float64),
                      -spec.action_scale, spec.action_scale)
    if spec.kind == "point":
        pos = states[:, :2]
        vel = states[:, 2:4]
        vel = vel * (1.0 - spec.damping) + actions * spec.accel_gain * spec.dt
        speed = np.linalg.norm(vel, axis=1, keepdims=True)
        scale = np.where(speed > spec.v_max, spec.v_max / np.maximum(speed, 1e-12), 1.0)
        vel = vel * scale
        new_pos = pos.copy()
        # axis-separated moves: a blocked axis keeps its coordinate and zeroes
        # that velocity component, so motion slides along wall faces
        for axis in range(2):
            trial = new_pos.copy()
            trial[:, axis] += vel[:, axis] * spec.dt
            blocked = _inside_wall(spec, trial)
            new_pos[~blocked, axis] = trial[~blocked, axis]
            vel[blocked, axis] = 0.0
        return np.concatenate([new_pos, vel], axis=1)
    theta = states[:, 0:2]
    omega = states[:, 2:4]
    omega = omega * (1.0 - spec.damping) + actions * spec.torque_gain * spec.dt
    omega = np.clip(omega, -spec.omega_max, spec.omega_max)
    theta = theta + omega * spec.dt
    tip = _fingertip(theta, spec.link_lengths)
    return np.concatenate([theta, omega, tip], axis=1)


def near_goal_batch(spec: EnvSpec, states: np.ndarray, goals: np.ndarray):
    d = np.linalg.norm(goal_projection(spec, states) - goals, axis=-1)
    return d <= spec.goal_radius


def step(spec: EnvSpec, state: np.ndarray, action: np.ndarray, goal: np.ndarray):
    """Single-transition convenience wrapper -> (next_state, reward, near_goal)."""
    nxt = step_batch(spec, state[None], np.asarray(action)[None])[0]
    near = bool(near_goal_batch(spec, nxt[None], np.asarray(goal)[None])[0])
    return nxt, (1.0 if near else 0.0), near


# -- evaluation --------------------------------------------------------------

def rollout_eval(policy_fn, spec: EnvSpec, n_episodes: int, seed: int,
                 constraint: SeparationConstraint = None):
    """Mean time-near-goal of a deterministic policy over n episodes.

    policy_fn maps (states (N, state_dim), goals (N, goal_dim)) -> actions.
    Episodes never terminate early; the agent may leave and re-enter the
    goal region.
    """
    if n_episodes <= 0:
        raise ConfigError("n_episodes must be positive")
    rng = np.random.default_rng(seed)
    states, goals = reset_batch(spec, n_episodes, rng, constraint)
    counts = np.zeros(n_episodes)
    for _ in range(spec.episode_length):
        actions = policy_fn(states, goals)
        states = step_batch(spec, states, actions)
        counts += near_goal_batch(spec, states, goals)
    return float(counts.mean()), counts
