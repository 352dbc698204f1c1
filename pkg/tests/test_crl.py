import numpy as np
import pytest

from deepcrl import crl
from deepcrl import nn
from deepcrl.arch import NetworkSpec, build_network
from deepcrl.crl import (CriticPair, GaussianPolicy, actor_loss, critic_energy,
                         energy_matrix, infonce_loss, policy_sample)
from deepcrl.nn import AdamState, Tensor, adam_step

from fdcheck import fd_grads, max_rel_error


def make_critic(state_dim=3, action_dim=2, goal_dim=2, repr_dim=4,
                depth=4, width=8, seed=0, dtype=np.float64):
    sa = build_network(NetworkSpec(state_dim + action_dim, width, depth, repr_dim),
                       seed=seed, dtype=dtype)
    g = build_network(NetworkSpec(goal_dim, width, depth, repr_dim),
                      seed=seed + 1, dtype=dtype)
    return CriticPair(sa, g, repr_dim)


def make_policy(state_dim=3, goal_dim=2, action_dim=2, depth=4, width=8,
                seed=2, dtype=np.float64):
    actor = build_network(NetworkSpec(state_dim + goal_dim, width, depth, 2 * action_dim),
                          seed=seed, dtype=dtype)
    return GaussianPolicy(actor, action_dim)


class TestCriticEnergy:
    def test_equal_embeddings(self):
        v = np.array([1.0, 2.0, 3.0])
        assert abs(float(critic_energy(v, v).data)) < 1e-5

    def test_3_4_5(self):
        e = critic_energy(np.array([0.0, 0.0]), np.array([3.0, 4.0]))
        assert abs(float(e.data) + 5.0) < 1e-9

    def test_rotation_invariance(self):
        rng = np.random.default_rng(0)
        phi = rng.normal(size=3)
        psi = rng.normal(size=3)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        e1 = float(critic_energy(phi, psi).data)
        e2 = float(critic_energy(q @ phi, q @ psi).data)
        assert abs(e1 - e2) < 1e-9

    def test_dim_mismatch(self):
        with pytest.raises(nn.ShapeError):
            critic_energy(np.zeros(3), np.zeros(4))


class TestEnergyMatrix:
    def test_b1(self):
        critic = make_critic()
        s = np.zeros((1, 3)); a = np.zeros((1, 2)); g = np.zeros((1, 2))
        L = energy_matrix(s, a, g, critic).data
        assert L.shape == (1, 1)

    def test_identical_rows_constant_matrix(self):
        critic = make_critic()
        s = np.tile(np.array([[0.1, 0.2, 0.3]]), (4, 1))
        a = np.tile(np.array([[0.5, -0.5]]), (4, 1))
        g = np.tile(np.array([[1.0, 1.0]]), (4, 1))
        L = energy_matrix(s, a, g, critic).data
        assert np.ptp(L) < 1e-12

    def test_hand_computed_2x2(self):
        from deepcrl.crl import pairwise_energies
        phi = np.array([[1.0, 0.0], [0.0, 2.0]])
        psi = np.array([[1.0, 0.0], [3.0, 4.0]])
        L = pairwise_energies(Tensor(phi), Tensor(psi)).data
        expected = -np.array([[0.0, np.sqrt(4 + 16)],
                              [np.sqrt(1 + 4), np.sqrt(9 + 4)]])
        assert np.allclose(L, expected, atol=1e-5)

    def test_matches_single_pair_energy(self):
        critic = make_critic()
        rng = np.random.default_rng(1)
        s, a, g = rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        L = energy_matrix(s, a, g, critic).data
        sa = np.concatenate([s, a], axis=1)
        phi = critic.sa_encoder.forward(sa, grad=False).data
        psi = critic.g_encoder.forward(g, grad=False).data
        for i in range(3):
            for j in range(3):
                e = float(critic_energy(phi[i], psi[j]).data)
                assert abs(L[i, j] - e) < 1e-8


class TestInfoNCE:
    @pytest.mark.parametrize("B", [2, 4, 512])
    def test_constant_matrix_ln_b(self, B):
        L = Tensor(np.full((B, B), -1.7))
        assert abs(float(infonce_loss(L, lam=0.0).data) - np.log(B)) < 1e-6

    def test_perfect_separation(self):
        L = np.full((4, 4), -1e9)
        np.fill_diagonal(L, 0.0)
        assert float(infonce_loss(Tensor(L), lam=0.0).data) < 1e-9

    def test_2x2_hand_value(self):
        L = Tensor(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        expected = np.log(1.0 + np.exp(-1.0))
        assert abs(float(infonce_loss(L, lam=0.0).data) - expected) < 1e-6

    def test_nonnegative_when_lam_zero(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            L = rng.normal(size=(6, 6))
            assert float(infonce_loss(Tensor(L), lam=0.0).data) >= 0.0

    def test_row_shift_invariance_lam_zero(self):
        rng = np.random.default_rng(3)
        L = rng.normal(size=(5, 5))
        shifted = L + rng.normal(size=(5, 1))  # constant per row
        a = float(infonce_loss(Tensor(L), lam=0.0).data)
        b = float(infonce_loss(Tensor(shifted), lam=0.0).data)
        assert abs(a - b) < 1e-10

    def test_penalty_breaks_shift_invariance(self):
        rng = np.random.default_rng(4)
        L = rng.normal(size=(5, 5))
        shifted = L + 3.0
        a = float(infonce_loss(Tensor(L), lam=0.1).data)
        b = float(infonce_loss(Tensor(shifted), lam=0.1).data)
        assert abs(a - b) > 1e-3

    def test_stable_for_large_entries(self):
        L = Tensor(np.full((3, 3), 500.0))
        out = float(infonce_loss(L, lam=0.1).data)
        assert np.isfinite(out)


class TestInfoNCEGradients:
    @pytest.mark.parametrize("depth,width", [(4, 8), (8, 8)])
    def test_critic_fd(self, depth, width):
        critic = make_critic(depth=depth, width=width)
        rng = np.random.default_rng(5)
        s, a, g = rng.normal(size=(3, 3)), rng.normal(size=(3, 2)), rng.normal(size=(3, 2))

        def loss_value():
            L = energy_matrix(s, a, g, critic, params_grad=False)
            return float(infonce_loss(L, lam=0.1).data)

        for store in (critic.sa_encoder.params, critic.g_encoder.params):
            store.zero_grads()
        infonce_loss(energy_matrix(s, a, g, critic), lam=0.1).backward()
        for store in (critic.sa_encoder.params, critic.g_encoder.params):
            analytic = {k: p.grad.copy() for k, p in store.items()}
            numeric = fd_grads(loss_value, store, step=1e-5)
            assert max_rel_error(analytic, numeric) <= 1e-4


class TestActorLoss:
    def test_constant_critic_zero_actor_grad(self):
        # zero critic weights: phi is constant in its input, alpha = 0
        critic = make_critic()
        for store in (critic.sa_encoder.params, critic.g_encoder.params):
            for name, p in store.items():
                p.value.fill(0.0)
        policy = make_policy()
        rng = np.random.default_rng(6)
        s, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        noise = rng.standard_normal((4, 2))
        policy.actor.params.zero_grads()
        actor_loss(s, g, policy, critic, alpha=0.0, noise=noise).backward()
        for _, p in policy.actor.params.items():
            assert np.allclose(p.grad, 0.0, atol=1e-12)

    def test_fd_gradients_tiny_actor(self):
        critic = make_critic(depth=4, width=4, seed=7)
        policy = make_policy(depth=4, width=4, seed=8)
        rng = np.random.default_rng(9)
        s, g = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
        noise = rng.standard_normal((3, 2))

        def loss_value():
            return float(actor_loss(s, g, policy, critic, alpha=0.01, noise=noise).data)

        policy.actor.params.zero_grads()
        actor_loss(s, g, policy, critic, alpha=0.01, noise=noise).backward()
        analytic = {k: p.grad.copy() for k, p in policy.actor.params.items()}
        numeric = fd_grads(loss_value, policy.actor.params, step=1e-5)
        assert max_rel_error(analytic, numeric) <= 1e-4

    def test_critic_grads_untouched(self):
        critic = make_critic(seed=10)
        policy = make_policy(seed=11)
        rng = np.random.default_rng(12)
        s, g = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        noise = rng.standard_normal((4, 2))
        for store in (critic.sa_encoder.params, critic.g_encoder.params):
            store.zero_grads()
        actor_loss(s, g, policy, critic, alpha=0.001, noise=noise).backward()
        for store in (critic.sa_encoder.params, critic.g_encoder.params):
            for _, p in store.items():
                assert np.all(p.grad == 0.0)

    def test_optimization_increases_energy(self):
        # 100 Adam steps on a frozen critic must raise mean sampled-action energy
        critic = make_critic(seed=13)
        policy = make_policy(seed=14)
        rng = np.random.default_rng(15)
        s, g = rng.normal(size=(8, 3)), rng.normal(size=(8, 2))
        state = AdamState(policy.actor.params, lr=1e-2)

        def mean_energy():
            a = policy_sample(policy, s, g, deterministic=True)
            sa = np.concatenate([s, a], axis=1)
            phi = critic.sa_encoder.forward(sa, grad=False).data
            psi = critic.g_encoder.forward(g, grad=False).data
            return float(np.mean(-np.linalg.norm(phi - psi, axis=1)))

        before = mean_energy()
        for i in range(100):
            noise = rng.standard_normal((8, 2))
            policy.actor.params.zero_grads()
            actor_loss(s, g, policy, critic, alpha=0.0, noise=noise).backward()
            adam_step(policy.actor.params, state)
        assert mean_energy() > before


class TestPolicySample:
    def test_deterministic_zero_mean(self):
        policy = make_policy(seed=16)
        # zero the head so mean = 0
        policy.actor.params["head.W"].value.fill(0.0)
        policy.actor.params["head.b"].value.fill(0.0)
        a = policy_sample(policy, np.zeros(3), np.zeros(2), deterministic=True)
        assert np.allclose(a, 0.0)

    def test_same_seed_same_sample(self):
        policy = make_policy(seed=17)
        s, g = np.ones(3), np.ones(2)
        a1 = policy_sample(policy, s, g, seed=5)
        a2 = policy_sample(policy, s, g, seed=5)
        assert np.array_equal(a1, a2)
        a3 = policy_sample(policy, s, g, seed=6)
        assert not np.array_equal(a1, a3)

    def test_samples_strictly_inside_bounds(self):
        policy = make_policy(seed=18)
        rng = np.random.default_rng(19)
        s, g = rng.normal(size=(64, 3)), rng.normal(size=(64, 2))
        a = policy_sample(policy, s, g, seed=20)
        assert np.all(np.abs(a) < policy.action_scale)

    def test_clamped_floor_concentrates_near_mean(self):
        policy = make_policy(seed=21)
        # drive raw log-std strongly negative: samples hug tanh(mean)
        policy.actor.params["head.W"].value.fill(0.0)
        policy.actor.params["head.b"].value[:2] = 1.5
        policy.actor.params["head.b"].value[2:] = -50.0
        s, g = np.full(3, 0.3), np.full(2, -0.2)
        det = policy_sample(policy, s, g, deterministic=True)
        hits = 0
        for k in range(200):
            a = policy_sample(policy, s, g, seed=k)
            if np.all(np.abs(a - det) <= 1e-2 * policy.action_scale):
                hits += 1
        assert hits / 200 > 0.99
