import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedsel.agent import (
    AgentHyperparams,
    ProfilerCache,
    QNetwork,
    RankingAgent,
    Transition,
    normalize_states,
    pairwise_probs,
    q_forward,
    rank_loss,
    rank_loss_with_targets,
    select_topk,
    selection_boundary_pairs,
    td_loss,
    vdn_total,
)
from fedsel.errors import InvalidSpecError
from fedsel.policies import CandidateObservation, top_k_ids
from fedsel.rng import keyed_rng


def random_transition(rng, n=6, k=2, terminal=False):
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return Transition(
        states=rng.standard_normal((n, 6)),
        action=mask,
        reward=float(rng.normal()),
        next_states=rng.standard_normal((n, 6)),
        terminal=terminal,
    )


class TestNormalizeStates:
    def test_constant_column_maps_to_zero(self):
        mat = np.ones((4, 6))
        assert np.array_equal(normalize_states(mat), np.zeros((4, 6)))

    def test_two_point_z_score(self):
        mat = np.zeros((2, 6))
        mat[1, :] = 2.0
        out = normalize_states(mat)
        assert np.allclose(out[0], -1.0) and np.allclose(out[1], 1.0)

    def test_zero_mean_columns(self):
        obs = [
            CandidateObservation(i, *keyed_rng(i).uniform(0.1, 2, 5), data_size=i + 1)
            for i in range(7)
        ]
        out = normalize_states(obs)
        assert np.all(np.abs(out.mean(axis=0)) < 1e-9)


class TestQForward:
    def test_zero_weights_give_zero(self):
        net = QNetwork(h1=4, h2=3, seed=0)
        net.theta[:] = 0.0
        assert q_forward(net, np.ones(6)) == 0.0

    def test_hand_computed_tiny_network(self):
        net = QNetwork(n_features=2, h1=1, h2=1, seed=0)
        # layout: W1 (2x1), b1 (1), W2 (1x1), b2 (1), w3 (1), b3 (1)
        net.theta = np.array([0.5, -0.25, 0.1, 2.0, -0.3, 0.7, 0.2])
        x = np.array([1.0, 2.0])
        a1 = np.tanh(0.5 * 1.0 + (-0.25) * 2.0 + 0.1)
        a2 = np.tanh(2.0 * a1 - 0.3)
        expected = 0.7 * a2 + 0.2
        assert q_forward(net, x) == pytest.approx(expected, rel=1e-15)

    def test_target_identical_after_sync(self):
        net = QNetwork(h1=5, h2=5, seed=3)
        net.theta += 0.5
        net.sync_target()
        x = keyed_rng(1).standard_normal(6)
        assert q_forward(net, x) == q_forward(net, x, use_target=True)


class TestVdnTotal:
    def test_empty_mask_is_zero(self):
        assert vdn_total(np.array([1.0, 2.0]), np.array([False, False])) == 0.0

    def test_masked_sum(self):
        assert vdn_total(np.array([1.0, 2.0, 3.0]), np.array([True, False, True])) == 4.0

    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=10), st.integers(0, 10**6))
    @settings(max_examples=100, deadline=None)
    def test_permutation_invariance(self, q, seed):
        q = np.asarray(q)
        rng = np.random.default_rng(seed)
        mask = rng.random(len(q)) < 0.5
        perm = rng.permutation(len(q))
        assert vdn_total(q, mask) == pytest.approx(vdn_total(q[perm], mask[perm]), rel=1e-12, abs=1e-12)


class TestSelectTopk:
    def test_argmax_without_exploration(self):
        mask = select_topk(np.array([0.1, 0.9, 0.5]), 1, 0.0, keyed_rng(0))
        assert np.flatnonzero(mask).tolist() == [1]

    def test_k_equals_n(self):
        assert select_topk(np.array([0.1, 0.2]), 2, 0.5, keyed_rng(0)).all()

    def test_constant_shift_invariance(self):
        q = keyed_rng(4).standard_normal(12)
        a = select_topk(q, 4, 0.0, keyed_rng(0))
        b = select_topk(q + 123.0, 4, 0.0, keyed_rng(0))
        assert np.array_equal(a, b)

    def test_exploration_is_seeded_and_valid(self):
        q = keyed_rng(5).standard_normal(10)
        a = select_topk(q, 3, 1.0, keyed_rng(7))
        b = select_topk(q, 3, 1.0, keyed_rng(7))
        assert np.array_equal(a, b)
        assert a.sum() == 3

    @given(st.integers(0, 10**6))
    @settings(max_examples=100, deadline=None)
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        q = rng.standard_normal(9)
        k = int(rng.integers(1, 9))
        a = select_topk(q, k, 0.0, keyed_rng(0))
        b = select_topk(np.exp(2.0 * q) + 5.0, k, 0.0, keyed_rng(0))
        assert np.array_equal(a, b)


class TestProfilerCache:
    def test_fifo_eviction_preserves_order(self):
        rng = keyed_rng(8)
        cap, extra = 5, 3
        items = [random_transition(rng) for _ in range(cap + extra)]
        cache = ProfilerCache(cap)
        for it in items:
            cache.push(it)
        assert len(cache) == cap
        assert cache.items() == items[extra:]

    def test_sampling_deterministic(self):
        rng = keyed_rng(9)
        cache = ProfilerCache(10)
        for _ in range(6):
            cache.push(random_transition(rng))
        a = cache.sample(4, keyed_rng(3))
        b = cache.sample(4, keyed_rng(3))
        assert all(x is y for x, y in zip(a, b))

    def test_empty_sample_rejected(self):
        with pytest.raises(InvalidSpecError):
            ProfilerCache(4).sample(2, keyed_rng(0))


class TestTdLoss:
    def test_gamma_zero_target_is_reward(self):
        net = QNetwork(h1=4, h2=4, seed=1)
        tr = random_transition(keyed_rng(2), n=4, k=2)
        q_pred, _ = net.forward(tr.states)
        y_hat = q_pred[tr.action].sum()
        loss, _ = td_loss([tr], net, gamma=0.0, k=2)
        assert loss == pytest.approx((y_hat - tr.reward) ** 2, rel=1e-12)

    def test_hand_evaluated_constant_network(self):
        net = QNetwork(h1=3, h2=3, seed=0)
        net.theta[:] = 0.0
        net.theta[-1] = 2.0  # output bias: every device scores 2
        net.sync_target()
        mask = np.array([True, False, False])
        tr = Transition(
            states=np.zeros((3, 6)), action=mask, reward=1.0,
            next_states=np.zeros((3, 6)), terminal=False,
        )
        # y = 1 + 0.9 * 2 (top-1 under target) = 2.8; y_hat = 2 -> loss 0.64
        loss, _ = td_loss([tr], net, gamma=0.9, k=1)
        assert loss == pytest.approx(0.64, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        for seed in range(5):
            rng = keyed_rng(seed, 77)
            net = QNetwork(h1=4, h2=3, seed=seed)
            batch = [random_transition(rng, n=5, k=2, terminal=(i == 0)) for i in range(3)]
            _, grad = td_loss(batch, net, gamma=0.9, k=2)
            idx = rng.choice(net.num_params, size=25, replace=False)
            for i in idx:
                orig = net.theta[i]
                net.theta[i] = orig + 1e-5
                up, _ = td_loss(batch, net, gamma=0.9, k=2)
                net.theta[i] = orig - 1e-5
                down, _ = td_loss(batch, net, gamma=0.9, k=2)
                net.theta[i] = orig
                numeric = (up - down) / 2e-5
                assert grad[i] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


class TestPairwise:
    def test_equal_scores_half(self):
        assert pairwise_probs(1.3, 1.3) == 0.5

    def test_log3_gap(self):
        assert pairwise_probs(np.log(3), 0.0) == pytest.approx(0.75, rel=1e-12)

    @given(st.floats(-20, 20), st.floats(-20, 20))
    @settings(max_examples=200, deadline=None)
    def test_antisymmetry(self, a, b):
        assert pairwise_probs(a, b) + pairwise_probs(b, a) == pytest.approx(1.0, abs=1e-12)


class TestRankLoss:
    def test_matched_half_probabilities_give_ln2(self):
        q = np.array([0.7, 0.7])
        pairs = np.array([[0, 1]])
        loss, _ = rank_loss(q, q, pairs)
        assert loss == pytest.approx(np.log(2), rel=1e-12)

    def test_perfect_match_loss_vanishes(self):
        pairs = np.array([[0, 1]])
        loss, _ = rank_loss_with_targets(np.array([20.0, 0.0]), pairs, np.array([1.0]))
        assert loss < 1e-6

    def test_constant_shift_invariance(self):
        rng = keyed_rng(3)
        q_pred, q_tgt = rng.standard_normal(8), rng.standard_normal(8)
        pairs = np.array([[0, 5], [2, 3], [7, 1]])
        base, gbase = rank_loss(q_pred, q_tgt, pairs)
        shifted, gshift = rank_loss(q_pred + 42.0, q_tgt, pairs)
        assert shifted == pytest.approx(base, rel=1e-12)
        np.testing.assert_allclose(gshift, gbase, rtol=1e-9, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        for seed in range(5):
            rng = keyed_rng(seed, 55)
            q_pred, q_tgt = rng.standard_normal(6), rng.standard_normal(6)
            pairs = np.array([(i, j) for i in range(3) for j in range(3, 6)])
            _, grad = rank_loss(q_pred, q_tgt, pairs)
            for i in range(6):
                up, down = q_pred.copy(), q_pred.copy()
                up[i] += 1e-6
                down[i] -= 1e-6
                lu, _ = rank_loss(up, q_tgt, pairs)
                ld, _ = rank_loss(down, q_tgt, pairs)
                assert grad[i] == pytest.approx((lu - ld) / 2e-6, rel=1e-4, abs=1e-9)


class TestJointUpdate:
    def make_agent(self, rank_weight, seed=0, lr=0.01):
        hp = AgentHyperparams(
            rank_weight=rank_weight, learning_rate=lr, batch_size=8,
            h1=8, h2=8, cache_capacity=64, target_sync_period=3,
        )
        agent = RankingAgent(n_devices=5, hp=hp, seed=seed)
        rng = keyed_rng(seed, 99)
        for _ in range(12):
            agent.observe(random_transition(rng, n=5, k=2))
        return agent

    def test_zero_rank_weight_bitmatches_pure_td(self):
        agent = self.make_agent(rank_weight=0.0)
        reference = self.make_agent(rank_weight=0.0)
        # manual pure-TD step with an identical rng stream
        batch = reference.cache.sample(reference.hp.batch_size, reference.rng)
        _, grad = td_loss(batch, reference.net, reference.hp.gamma, 2)
        expected = reference.net.theta - reference.hp.learning_rate * grad
        agent.joint_update(k=2)
        assert np.array_equal(agent.net.theta, expected)

    def test_loss_decreases_on_frozen_batch(self):
        agent = self.make_agent(rank_weight=1.0, lr=0.02)
        first_td, _ = td_loss(agent.cache.items(), agent.net, agent.hp.gamma, 2)
        for _ in range(100):
            agent.joint_update(k=2)
        last_td, _ = td_loss(agent.cache.items(), agent.net, agent.hp.gamma, 2)
        assert last_td < first_td

    def test_target_sync(self):
        agent = self.make_agent(rank_weight=1.0)
        agent.joint_update(k=2)
        assert not np.array_equal(agent.net.theta, agent.net.target)
        agent.joint_update(k=2)
        agent.joint_update(k=2)  # step 3 == sync period
        assert np.array_equal(agent.net.theta, agent.net.target)


def test_agent_checkpoint_roundtrip(tmp_path):
    hp = AgentHyperparams(h1=8, h2=8, batch_size=4, cache_capacity=16)
    agent = RankingAgent(n_devices=4, hp=hp, seed=5)
    rng = keyed_rng(1)
    for _ in range(6):
        agent.observe(random_transition(rng, n=4, k=2))
    agent.joint_update(k=2)
    path = tmp_path / "agent.ckpt"
    agent.save(path)

    clone = RankingAgent(n_devices=4, hp=hp, seed=99)
    clone.load(path)
    assert np.array_equal(clone.net.theta, agent.net.theta)
    assert np.array_equal(clone.net.target, agent.net.target)
    assert clone.step == agent.step
    # restored rng continues the stream identically
    assert clone.rng.random() == agent.rng.random()


def test_selection_boundary_pairs_cap():
    mask = np.zeros(40, dtype=bool)
    mask[:10] = True
    pairs = selection_boundary_pairs(mask, 256, keyed_rng(0))
    assert len(pairs) == 256
    assert all(mask[i] and not mask[j] for i, j in pairs)


def test_transition_requires_finite_reward():
    with pytest.raises(InvalidSpecError):
        Transition(
            states=np.zeros((2, 6)), action=np.array([True, False]),
            reward=float("nan"), next_states=np.zeros((2, 6)),
        )
