"""Client-side SGD (probing epoch + remaining epochs), evaluation, FedAvg."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ClientShard, Dataset
from .errors import AggregationError, InvalidSpecError, NumericFailureError
from .models import ModelParams, batch_loss, forward, loss_and_grad
from .rng import keyed_rng


@dataclass(frozen=True)
class TrainConfig:
    """Local SGD hyperparameters.  Epoch 1 is the probing epoch."""

    learning_rate: float
    batch_size: int
    local_epochs: int
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidSpecError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise InvalidSpecError("batch_size must be positive")
        if self.local_epochs < 1:
            raise InvalidSpecError("local_epochs must be >= 1")


def _epoch_batches(n: int, batch_size: int, seed: int, epoch: int):
    """Batch index slices for one epoch; order shuffled by (seed, epoch)."""
    perm = keyed_rng(seed, epoch).permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def sgd_epochs(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    epochs: range,
) -> tuple[ModelParams, list[float]]:
    """Run the given epoch indices of mini-batch SGD.

    Returns updated params and per-batch pre-update losses across all epochs.
    Batch order of epoch e is the seeded permutation keyed by (cfg.seed, e),
    so any slice of epochs can be replayed independently.
    """
    out = params.copy()
    losses: list[float] = []
    for epoch in epochs:
        for b, idx in enumerate(_epoch_batches(len(X), cfg.batch_size, cfg.seed, epoch)):
            loss, grad = loss_and_grad(out, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericFailureError(
                    f"non-finite loss {loss} in epoch {epoch}", batch_index=b
                )
            losses.append(loss)
            out.vector -= cfg.learning_rate * grad
    return out, losses


def shard_arrays(dataset: Dataset, shard: ClientShard) -> tuple[np.ndarray, np.ndarray]:
    return dataset.features[shard.example_indices], dataset.labels[shard.example_indices]


def probe_epoch(
    params: ModelParams, dataset: Dataset, shard: ClientShard, cfg: TrainConfig
) -> tuple[ModelParams, float, list[float]]:
    """One probing epoch of SGD.

    Returns (updated params, probing loss, per-batch losses).  The probing
    loss is the mean of pre-update batch losses, so it measures data
    difficulty at the incoming weights rather than step size.
    """
    if shard.size == 0:
        raise InvalidSpecError(f"client {shard.client_id} has an empty shard")
    X, y = shard_arrays(dataset, shard)
    out, losses = sgd_epochs(params, X, y, cfg, range(0, 1))
    return out, float(np.mean(losses)), losses


def finish_local_training(
    params_after_probe: ModelParams, dataset: Dataset, shard: ClientShard, cfg: TrainConfig
) -> ModelParams:
    """Epochs 2..local_epochs, continuing from the probe output.

    A no-op when local_epochs == 1.
    """
    if cfg.local_epochs == 1:
        return params_after_probe
    X, y = shard_arrays(dataset, shard)
    out, _ = sgd_epochs(params_after_probe, X, y, cfg, range(1, cfg.local_epochs))
    return out


def fedavg_aggregate(updates: list[tuple[ModelParams, int]]) -> ModelParams:
    """Data-size-weighted mean of parameter vectors."""
    if not updates:
        raise AggregationError("no updates to aggregate")
    ref = updates[0][0]
    total = float(sum(d for _, d in updates))
    acc = np.zeros_like(ref.vector)
    for i, (p, d) in enumerate(updates):
        if p.shape != ref.shape:
            raise AggregationError(f"shape mismatch in update {i}: {p.shape} != {ref.shape}")
        acc += (d / total) * p.vector
    return ModelParams(ref.shape, acc)


def evaluate(params: ModelParams, dataset: Dataset) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on a dataset.

    Argmax ties break to the lowest class index for cross-platform
    determinism (numpy argmax returns the first maximum).
    """
    probs = forward(params, dataset.features)
    preds = probs.argmax(axis=1)
    acc = float((preds == dataset.labels).mean())
    return acc, batch_loss(params, dataset.features, dataset.labels)


def weight_divergence(global_params: ModelParams, locals_: list[ModelParams]) -> float:
    """Max over clients of ||w_global - w_local|| (Euclidean)."""
    worst = 0.0
    for i, p in enumerate(locals_):
        if p.shape != global_params.shape:
            raise AggregationError(f"shape mismatch for local model {i}")
        worst = max(worst, float(np.linalg.norm(global_params.vector - p.vector)))
    return worst
