"""Episode-segmented replay buffer with geometric future-goal relabeling.

Episodes are stored whole; only completed episodes are sampleable.  Goals are
stored as raw states and projected to goal space at sampling time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize

_GEOMETRIC_TRIES = 20


class UsageError(RuntimeError):
    pass


class NotReadyError(RuntimeError):
    """Buffer is below its minimum size; the trainer should keep collecting."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray
    step_index: int
    episode_id: int


@dataclass
class TrainingBatch:
    states: np.ndarray   # (B, state_dim)
    actions: np.ndarray  # (B, action_dim)
    goals: np.ndarray    # (B, goal_dim)


class _Episode:
    __slots__ = ("states", "actions")

    def __init__(self, states, actions):
        # states has length T+1 (terminal next_state included); actions length T
        self.states = states
        self.actions = actions

    def __len__(self):
        return len(self.actions)


def sample_future_offset(length: int, t: int, gamma: float, rng) -> int:
    """Future state index t + delta, delta >= 1, delta ~ Geometric(1 - gamma).

    `length` is the number of stored states (transitions + 1); valid future
    indices are t+1 .. length-1.  Rejection-samples the geometric up to 20
    times, then falls back to a uniform future draw.
    """
    if not 0 <= t < length - 1:
        raise UsageError(f"t={t} out of range for state sequence of length {length}")
    if not 0.0 <= gamma < 1.0:
        raise UsageError(f"gamma must be in [0, 1), got {gamma}")
    limit = length - 1 - t
    if limit == 1 or gamma == 0.0:
        return t + 1
    for _ in range(_GEOMETRIC_TRIES):
        delta = int(rng.geometric(1.0 - gamma))
        if delta <= limit:
            return t + delta
    return t + int(rng.integers(1, limit + 1))


class ReplayBuffer:
    """FIFO episode ring bounded by a total-transition capacity."""

    def __init__(self, capacity_transitions: int = 1_000_000,
                 min_size_transitions: int = 10_000):
        self.capacity = capacity_transitions
        self.min_size = min_size_transitions
        self._episodes: list[_Episode] = []
        self._size = 0
        self._partial_states: list[np.ndarray] = []
        self._partial_actions: list[np.ndarray] = []
        self._next_step = 0

    def __len__(self):
        return self._size

    @property
    def num_episodes(self):
        return len(self._episodes)

    @property
    def ready(self):
        return self._size >= self.min_size

    def append_step(self, t: Transition):
        if t.step_index != self._next_step:
            raise UsageError(
                f"out-of-order step_index {t.step_index}, expected {self._next_step}")
        if not self._partial_states:
            self._partial_states.append(np.asarray(t.state))
        self._partial_actions.append(np.asarray(t.action))
        self._partial_states.append(np.asarray(t.next_state))
        self._next_step += 1

    def append_episode(self, states: np.ndarray, actions: np.ndarray):
        """Bulk insert of one complete episode (states length = actions + 1)."""
        if len(states) != len(actions) + 1:
            raise UsageError("episode needs len(states) == len(actions) + 1")
        if len(actions) == 0:
            return
        self._episodes.append(_Episode(np.array(states), np.array(actions)))
        self._size += len(actions)
        self._evict()

    def end_episode(self):
        if not self._partial_actions:
            return
        self.append_episode(np.stack(self._partial_states),
                            np.stack(self._partial_actions))
        self._partial_states = []
        self._partial_actions = []
        self._next_step = 0

    def _evict(self):
        while self._size > self.capacity and len(self._episodes) > 1:
            gone = self._episodes.pop(0)
            self._size -= len(gone)

    def _pick_transitions(self, B, rng):
        lengths = np.array([len(e) for e in self._episodes])
        cum = np.cumsum(lengths)
        flat = rng.integers(0, self._size, size=B)
        ep_idx = np.searchsorted(cum, flat, side="right")
        t_idx = flat - (cum[ep_idx] - lengths[ep_idx])
        return ep_idx, t_idx

    def sample_training_batch(self, B: int, gamma: float, rng,
                              goal_projection=None) -> TrainingBatch:
        """B uniform (episode, t) draws with geometric future-state goals."""
        if not self.ready:
            raise NotReadyError(
                f"buffer holds {self._size} transitions, minimum is {self.min_size}")
        ep_idx, t_idx = self._pick_transitions(B, rng)
        states, actions, goals = [], [], []
        for e, t in zip(ep_idx, t_idx):
            ep = self._episodes[e]
            states.append(ep.states[t])
            actions.append(ep.actions[t])
            future = sample_future_offset(len(ep.states), int(t), gamma, rng)
            goals.append(ep.states[future])
        goals = np.stack(goals)
        if goal_projection is not None:
            goals = goal_projection(goals)
        return TrainingBatch(np.stack(states), np.stack(actions), goals)

    # -- snapshot spill ------------------------------------------------------

    def save(self, path: str):
        arrays = {}
        for i, ep in enumerate(self._episodes):
            arrays[f"ep{i}.states"] = ep.states.astype(np.float32)
            arrays[f"ep{i}.actions"] = ep.actions.astype(np.float32)
        meta = f"capacity={self.capacity}\nmin_size={self.min_size}\n".encode()
        serialize.dump(path, arrays, config_blob=meta)

    @classmethod
    def load(cls, path: str) -> "ReplayBuffer":
        arrays, meta, _ = serialize.load(path)
        kv = dict(line.split("=") for line in meta.decode().strip().splitlines())
        buf = cls(int(kv["capacity"]), int(kv["min_size"]))
        i = 0
        while f"ep{i}.states" in arrays:
            buf.append_episode(arrays[f"ep{i}.states"], arrays[f"ep{i}.actions"])
            i += 1
        return buf
