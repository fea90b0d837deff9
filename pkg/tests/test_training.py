import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fedsel.training as training
from fedsel.data import ClientShard, Dataset, SyntheticSpec, make_synthetic
from fedsel.errors import AggregationError, InvalidSpecError
from fedsel.models import ModelParams, ModelShape, init_params
from fedsel.rng import keyed_rng
from fedsel.training import (
    TrainConfig,
    evaluate,
    fedavg_aggregate,
    finish_local_training,
    probe_epoch,
    weight_divergence,
)


def full_shard(dataset):
    return ClientShard(client_id=0, example_indices=np.arange(len(dataset)))


def oracle_sgd(vector, X, y, lr, batch_size, seed, epochs):
    """Independent scalar softmax-regression SGD with the same batch schedule."""
    d, c = X.shape[1], int(y.max()) + 1
    W = vector[: d * c].reshape(d, c).copy()
    b = vector[d * c :].copy()
    losses = []
    for epoch in epochs:
        perm = keyed_rng(seed, epoch).permutation(len(X))
        for start in range(0, len(X), batch_size):
            idx = perm[start : start + batch_size]
            Xb, yb = X[idx], y[idx]
            logits = Xb @ W + b
            logits -= logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            losses.append(-np.mean(np.log(probs[np.arange(len(yb)), yb])))
            delta = probs
            delta[np.arange(len(yb)), yb] -= 1
            delta /= len(yb)
            W -= lr * (Xb.T @ delta)
            b -= lr * delta.sum(axis=0)
    return np.concatenate([W.ravel(), b]), losses


class TestProbeEpoch:
    def test_zero_init_zero_lr_gives_log_c(self):
        ds = make_synthetic(SyntheticSpec(num_classes=4, dims=3, samples=40, seed=1))
        params = init_params(ModelShape("softmax_regression", (3, 4)))
        cfg = TrainConfig(learning_rate=0.0, batch_size=8, local_epochs=1, seed=3)
        out, probing_loss, _ = probe_epoch(params, ds, full_shard(ds), cfg)
        assert probing_loss == pytest.approx(np.log(4), abs=1e-12)
        assert np.array_equal(out.vector, params.vector)

    def test_first_batch_loss_is_log_10(self):
        ds = make_synthetic(SyntheticSpec(num_classes=10, dims=5, samples=100, seed=2))
        params = init_params(ModelShape("softmax_regression", (5, 10)))
        cfg = TrainConfig(learning_rate=0.1, batch_size=10, local_epochs=1, seed=4)
        _, _, batch_losses = probe_epoch(params, ds, full_shard(ds), cfg)
        assert batch_losses[0] == pytest.approx(np.log(10), abs=1e-12)

    def test_matches_scalar_oracle(self):
        ds = make_synthetic(SyntheticSpec(num_classes=3, dims=4, samples=60, seed=5))
        params = init_params(ModelShape("softmax_regression", (4, 3)))
        cfg = TrainConfig(learning_rate=0.1, batch_size=16, local_epochs=1, seed=7)
        out, probing_loss, _ = probe_epoch(params, ds, full_shard(ds), cfg)
        expected_vec, expected_losses = oracle_sgd(
            params.vector, ds.features, ds.labels, 0.1, 16, 7, range(0, 1)
        )
        assert probing_loss < np.log(3)
        assert probing_loss == pytest.approx(np.mean(expected_losses), rel=1e-12)
        np.testing.assert_allclose(out.vector, expected_vec, rtol=1e-12, atol=1e-15)


class TestFinishLocalTraining:
    def test_single_epoch_is_noop(self):
        ds = make_synthetic(SyntheticSpec(num_classes=2, dims=2, samples=20, seed=1))
        params = init_params(ModelShape("softmax_regression", (2, 2)), seed=1, scale=0.1)
        cfg = TrainConfig(learning_rate=0.1, batch_size=4, local_epochs=1, seed=0)
        out = finish_local_training(params, ds, full_shard(ds), cfg)
        assert out is params

    def test_runs_exactly_four_epochs_when_lep_5(self, monkeypatch):
        ds = make_synthetic(SyntheticSpec(num_classes=2, dims=2, samples=32, seed=1))
        cfg = TrainConfig(learning_rate=0.1, batch_size=8, local_epochs=5, seed=0)
        params = init_params(ModelShape("softmax_regression", (2, 2)))
        calls = []
        original = training.loss_and_grad
        monkeypatch.setattr(training, "loss_and_grad", lambda *a: calls.append(1) or original(*a))
        finish_local_training(params, ds, full_shard(ds), cfg)
        assert len(calls) == 4 * (32 // 8)

    def test_continues_probe_against_oracle(self):
        ds = make_synthetic(SyntheticSpec(num_classes=3, dims=3, samples=45, seed=9))
        params = init_params(ModelShape("softmax_regression", (3, 3)))
        cfg = TrainConfig(learning_rate=0.05, batch_size=9, local_epochs=3, seed=11)
        probed, _, _ = probe_epoch(params, ds, full_shard(ds), cfg)
        final = finish_local_training(probed, ds, full_shard(ds), cfg)
        expected_vec, _ = oracle_sgd(
            probed.vector, ds.features, ds.labels, 0.05, 9, 11, range(1, 3)
        )
        np.testing.assert_allclose(final.vector, expected_vec, rtol=1e-12, atol=1e-15)


def make_params(values):
    shape = ModelShape("softmax_regression", (1, len(values) // 2))
    return ModelParams(shape, np.asarray(values, dtype=np.float64))


class TestFedAvg:
    def test_equal_weight_mean(self):
        out = fedavg_aggregate([(make_params([0, 2, 0, 2]), 1), (make_params([2, 0, 2, 0]), 1)])
        assert out.vector.tolist() == [1, 1, 1, 1]

    def test_weighted_mean(self):
        out = fedavg_aggregate([(make_params([0, 0, 0, 0]), 1), (make_params([4, 4, 4, 4]), 3)])
        assert out.vector.tolist() == [3, 3, 3, 3]

    def test_single_update_identity(self):
        p = make_params([1.5, -2, 0, 7])
        assert np.array_equal(fedavg_aggregate([(p, 5)]).vector, p.vector)

    def test_shape_mismatch_names_client(self):
        a = make_params([0, 0, 0, 0])
        b = ModelParams(ModelShape("softmax_regression", (2, 2)), np.zeros(6))
        with pytest.raises(AggregationError, match="update 1"):
            fedavg_aggregate([(a, 1), (b, 1)])

    @given(
        a=st.floats(-5, 5, allow_nan=False),
        b=st.floats(-5, 5, allow_nan=False),
        weights=st.lists(st.integers(1, 20), min_size=1, max_size=5),
    )
    @settings(max_examples=50, deadline=None)
    def test_affine_equivariance(self, a, b, weights):
        rng = keyed_rng(13)
        params = [make_params(rng.standard_normal(4)) for _ in weights]
        base = fedavg_aggregate(list(zip(params, weights)))
        shifted = [
            (ModelParams(p.shape, a * p.vector + b), w) for p, w in zip(params, weights)
        ]
        out = fedavg_aggregate(shifted)
        np.testing.assert_allclose(out.vector, a * base.vector + b, rtol=1e-9, atol=1e-9)


class TestEvaluate:
    def test_zero_init_ties_to_class_zero(self):
        feats = keyed_rng(1).standard_normal((10, 2))
        labels = np.array([0, 1] * 5, dtype=np.int64)
        ds = Dataset(feats, labels, 2)
        params = init_params(ModelShape("softmax_regression", (2, 2)))
        acc, _ = evaluate(params, ds)
        assert acc == 0.5  # ties break to class 0, which is half the labels

    def test_perfect_separation(self):
        ds = make_synthetic(SyntheticSpec(num_classes=2, dims=2, samples=40, cluster_spread=50.0, seed=3))
        # a linear boundary along the difference of the two cluster means
        means = np.stack([ds.features[ds.labels == c].mean(axis=0) for c in (0, 1)])
        W = means.T
        b = -0.5 * (means**2).sum(axis=1)
        params = ModelParams(
            ModelShape("softmax_regression", (2, 2)), np.concatenate([W.ravel(), b])
        )
        acc, _ = evaluate(params, ds)
        assert acc == 1.0

    def test_hand_computed_forward(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.5]])
        y = np.array([0, 1, 1, 0], dtype=np.int64)
        W = np.array([[0.5, -0.5], [-0.25, 0.75]])
        b = np.array([0.1, -0.1])
        params = ModelParams(ModelShape("softmax_regression", (2, 2)), np.concatenate([W.ravel(), b]))
        logits = X @ W + b
        probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        expected_acc = np.mean(probs.argmax(axis=1) == y)
        expected_loss = -np.mean(np.log(probs[np.arange(4), y]))
        acc, loss = evaluate(params, Dataset(X, y, 2))
        assert acc == pytest.approx(expected_acc, abs=1e-12)
        assert loss == pytest.approx(expected_loss, rel=1e-12)


class TestWeightDivergence:
    def test_identical_is_zero(self):
        p = make_params([1, 2, 3, 4])
        assert weight_divergence(p, [p.copy(), p.copy()]) == 0.0

    def test_three_four_five(self):
        g = make_params([0, 0, 0, 0])
        local = make_params([3, 4, 0, 0])
        assert weight_divergence(g, [local]) == 5.0

    def test_max_of_hand_computed_norms(self):
        g = make_params([1.0, -1.0, 0.5, 2.0])
        locals_ = [make_params(v) for v in ([0, 0, 0, 0], [2, 2, 2, 2], [1, -1, 0.5, 2])]
        expected = max(np.linalg.norm(g.vector - l.vector) for l in locals_)
        assert weight_divergence(g, locals_) == pytest.approx(expected, rel=1e-15)


def test_empty_shard_rejected():
    ds = make_synthetic(SyntheticSpec(num_classes=2, dims=2, samples=10, seed=1))
    shard = ClientShard(client_id=3, example_indices=np.array([], dtype=np.int64))
    cfg = TrainConfig(learning_rate=0.1, batch_size=4, local_epochs=1)
    with pytest.raises(InvalidSpecError, match="client 3"):
        probe_epoch(init_params(ModelShape("softmax_regression", (2, 2))), ds, shard, cfg)
