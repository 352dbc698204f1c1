import numpy as np
import pytest

from deepcrl.replay import (NotReadyError, ReplayBuffer, Transition, UsageError,
                            sample_future_offset)


def make_transition(i, episode_id=0, dim=2):
    s = np.full(dim, float(i))
    return Transition(s, np.zeros(1), s + 1.0, i, episode_id)


def fill_episode(buf, length, episode_id=0, dim=2):
    for i in range(length):
        buf.append_step(make_transition(i, episode_id, dim))
    buf.end_episode()


class TestAppend:
    def test_five_steps(self):
        buf = ReplayBuffer(100, 1)
        fill_episode(buf, 5)
        assert len(buf) == 5
        assert buf.num_episodes == 1

    def test_partial_not_sampleable(self):
        buf = ReplayBuffer(100, 1)
        for i in range(3):
            buf.append_step(make_transition(i))
        assert len(buf) == 0
        with pytest.raises(NotReadyError):
            buf.sample_training_batch(4, 0.9, np.random.default_rng(0))

    def test_out_of_order(self):
        buf = ReplayBuffer(100, 1)
        buf.append_step(make_transition(0))
        with pytest.raises(UsageError):
            buf.append_step(make_transition(2))

    def test_empty_end_episode_noop(self):
        buf = ReplayBuffer(100, 1)
        buf.end_episode()
        assert len(buf) == 0 and buf.num_episodes == 0

    def test_fifo_eviction(self):
        buf = ReplayBuffer(capacity_transitions=10, min_size_transitions=1)
        for ep in range(4):
            fill_episode(buf, 4, episode_id=ep)
        # 16 transitions > 10: the oldest episode(s) must go, whole at a time
        assert len(buf) <= 10
        assert len(buf) == 8
        rng = np.random.default_rng(1)
        batch = buf.sample_training_batch(64, 0.0, rng)
        # oldest surviving episode starts at state value 0 of ep 2; states from
        # evicted episodes (all have the same values here) -- check count only
        assert batch.states.shape == (64, 2)


class TestFutureOffset:
    def test_gamma_zero_always_next(self):
        rng = np.random.default_rng(2)
        for t in range(9):
            assert sample_future_offset(10, t, 0.0, rng) == t + 1

    def test_last_slot_forced(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            assert sample_future_offset(10, 8, 0.99, rng) == 9

    def test_always_strictly_future(self):
        rng = np.random.default_rng(4)
        for _ in range(2000):
            t = int(rng.integers(0, 9))
            idx = sample_future_offset(10, t, 0.95, rng)
            assert t < idx <= 9

    def test_geometric_mean_long_episode(self):
        # E[delta] = 1/(1-gamma) = 100; truncation negligible for length 10k
        rng = np.random.default_rng(5)
        n = 1_000_000
        draws = rng.geometric(0.01, size=n)  # same distribution, vectorized ref
        # actual sampler, sampled fewer times for runtime, then full MC below
        total = sum(sample_future_offset(10_001, 0, 0.99, rng) for _ in range(100_000))
        assert abs(total / 100_000 - 100.0) <= 2.0
        assert abs(draws.mean() - 100.0) <= 2.0

    def test_bad_args(self):
        rng = np.random.default_rng(6)
        with pytest.raises(UsageError):
            sample_future_offset(10, 9, 0.5, rng)
        with pytest.raises(UsageError):
            sample_future_offset(10, 0, 1.0, rng)


class TestSampleBatch:
    def test_goal_strictly_future_same_episode(self):
        buf = ReplayBuffer(1000, 1)
        fill_episode(buf, 50)
        rng = np.random.default_rng(7)
        batch = buf.sample_training_batch(256, 0.9, rng)
        # state value encodes the timestep; goals must be strictly later
        assert np.all(batch.goals[:, 0] > batch.states[:, 0])

    def test_single_episode_forced(self):
        buf = ReplayBuffer(1000, 1)
        fill_episode(buf, 10)
        rng = np.random.default_rng(8)
        batch = buf.sample_training_batch(32, 0.5, rng)
        assert batch.states.shape == (32, 2)

    def test_goal_projection_applied(self):
        buf = ReplayBuffer(1000, 1)
        fill_episode(buf, 10)
        rng = np.random.default_rng(9)
        batch = buf.sample_training_batch(8, 0.5, rng,
                                          goal_projection=lambda s: s[:, :1] * 2.0)
        assert batch.goals.shape == (8, 1)

    def test_episode_balance(self):
        # two equal-length episodes must each supply ~50% of rows
        buf = ReplayBuffer(10_000, 1)
        fill_episode(buf, 100, episode_id=0)
        for i in range(100):
            s = np.full(2, 1000.0 + i)
            buf.append_step(Transition(s, np.zeros(1), s + 1.0, i, 1))
        buf.end_episode()
        rng = np.random.default_rng(10)
        from_second = 0
        total = 0
        for _ in range(400):
            batch = buf.sample_training_batch(256, 0.5, rng)
            from_second += int(np.sum(batch.states[:, 0] >= 1000.0))
            total += 256
        assert abs(from_second / total - 0.5) <= 0.01

    def test_deterministic_given_seed(self):
        buf = ReplayBuffer(1000, 1)
        fill_episode(buf, 30)
        b1 = buf.sample_training_batch(16, 0.9, np.random.default_rng(11))
        b2 = buf.sample_training_batch(16, 0.9, np.random.default_rng(11))
        assert np.array_equal(b1.states, b2.states)
        assert np.array_equal(b1.goals, b2.goals)


class TestCapacityFuzz:
    def test_long_fuzz_respects_capacity(self):
        rng = np.random.default_rng(12)
        buf = ReplayBuffer(capacity_transitions=5_000, min_size_transitions=10)
        steps = 0
        while steps < 200_000:
            length = int(rng.integers(1, 60))
            for i in range(length):
                buf.append_step(Transition(np.zeros(2), np.zeros(1), np.zeros(2), i, 0))
            buf.end_episode()
            steps += length
            assert len(buf) <= 5_000
            assert sum(len(e.states) - 1 for e in buf._episodes) == len(buf)


class TestSpill:
    def test_roundtrip(self, tmp_path):
        buf = ReplayBuffer(1000, 5)
        fill_episode(buf, 20, episode_id=0)
        fill_episode(buf, 15, episode_id=1)
        path = str(tmp_path / "buffer.bin")
        buf.save(path)
        loaded = ReplayBuffer.load(path)
        assert len(loaded) == len(buf)
        assert loaded.num_episodes == buf.num_episodes
        b1 = buf.sample_training_batch(16, 0.9, np.random.default_rng(13))
        b2 = loaded.sample_training_batch(16, 0.9, np.random.default_rng(13))
        assert np.array_equal(b1.states, b2.states)
