"""Ranking-based selection agent.

A small per-device scoring MLP (6 features -> h1 -> h2 -> scalar, tanh
hidden layers) with a shadow target copy.  The total action value of a
round is the sum of per-device scores over the selected set (value
decomposition), trained online on a squared TD error plus a pairwise
ranking loss that pushes selected devices above unselected ones.
All gradients are hand-written and validated by finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, NumericFailureError, ParseError
from .policies import STATE_FEATURES, CandidateObservation, mask_from_ids, top_k_ids
from .rng import keyed_rng

PROB_CLAMP = 1e-7
AGENT_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AgentHyperparams:
    gamma: float = 0.95  # discount
    rank_weight: float = 1.0  # epsilon multiplier on the ranking loss
    learning_rate: float = 1e-3
    target_sync_period: int = 10  # updates between target-network copies
    explore_start: float = 0.2  # epsilon-greedy schedule, linear decay
    explore_end: float = 0.02
    h1: int = 64
    h2: int = 64
    cache_capacity: int = 4096
    batch_size: int = 64
    max_pairs: int = 256  # ranking pairs sampled per transition

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise InvalidSpecError("gamma must be in [0, 1)")
        if self.rank_weight < 0:
            raise InvalidSpecError("rank_weight must be >= 0")
        if self.target_sync_period < 1:
            raise InvalidSpecError("target_sync_period must be >= 1")


@dataclass(frozen=True)
class Transition:
    """One round's experience, stored in the profiler cache."""

    states: np.ndarray = field(repr=False)  # (N, 6) normalized
    action: np.ndarray = field(repr=False)  # (N,) bool, exactly K true
    reward: float
    next_states: np.ndarray = field(repr=False)
    terminal: bool = False

    def __post_init__(self):
        if not np.isfinite(self.reward):
            raise InvalidSpecError("transition reward must be finite")


class ProfilerCache:
    """FIFO ring buffer of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidSpecError("cache capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def push(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._next] = item
            self._next = (self._next + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._items)

    def items(self) -> list[Transition]:
        """Contents oldest-first."""
        return self._items[self._next :] + self._items[: self._next]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise InvalidSpecError("cannot sample from an empty cache")
        idx = rng.integers(len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


class QNetwork:
    """Per-device scoring MLP with a shadow target parameter vector."""

    def __init__(
        self,
        n_features: int = STATE_FEATURES,
        h1: int = 64,
        h2: int = 64,
        seed: int = 0,
        init_scale: float = 0.1,
    ):
        self.n_features = n_features
        self.h1 = h1
        self.h2 = h2
        sizes = [
            n_features * h1, h1,  # W1, b1
            h1 * h2, h2,  # W2, b2
            h2, 1,  # w3, b3
        ]
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])
        rng = keyed_rng(seed)
        parts = []
        for fan_in, count in ((n_features, n_features * h1), (1, h1), (h1, h1 * h2), (1, h2), (h2, h2), (1, 1)):
            parts.append(rng.normal(0.0, init_scale / np.sqrt(fan_in), size=count))
        self.theta = np.concatenate(parts)
        self.target = self.theta.copy()

    @property
    def num_params(self) -> int:
        return int(self._offsets[-1])

    def _unpack(self, vec: np.ndarray):
        o = self._offsets
        return (
            vec[o[0] : o[1]].reshape(self.n_features, self.h1),
            vec[o[1] : o[2]],
            vec[o[2] : o[3]].reshape(self.h1, self.h2),
            vec[o[3] : o[4]],
            vec[o[4] : o[5]],
            vec[o[5] : o[6]],
        )

    def forward(self, states: np.ndarray, use_target: bool = False):
        """Per-device scores for an (M, 6) state matrix.

        Returns (q, cache); the cache feeds backward().
        """
        vec = self.target if use_target else self.theta
        W1, b1, W2, b2, w3, b3 = self._unpack(vec)
        X = np.atleast_2d(np.asarray(states, dtype=np.float64))
        a1 = np.tanh(X @ W1 + b1)
        a2 = np.tanh(a1 @ W2 + b2)
        q = a2 @ w3 + b3[0]
        return q, (X, a1, a2, vec)

    def backward(self, cache, dq: np.ndarray) -> np.ndarray:
        """Gradient of sum(dq * q) w.r.t. the parameters used in forward."""
        X, a1, a2, vec = cache
        _, _, W2, _, w3, _ = self._unpack(vec)
        dq = np.asarray(dq, dtype=np.float64)
        da2 = np.outer(dq, w3)
        dz2 = da2 * (1.0 - a2 * a2)
        da1 = dz2 @ W2.T
        dz1 = da1 * (1.0 - a1 * a1)
        return np.concatenate(
            [
                (X.T @ dz1).ravel(),
                dz1.sum(axis=0),
                (a1.T @ dz2).ravel(),
                dz2.sum(axis=0),
                a2.T @ dq,
                [dq.sum()],
            ]
        )

    def sync_target(self) -> None:
        self.target = self.theta.copy()


def normalize_states(raw: list[CandidateObservation] | np.ndarray) -> np.ndarray:
    """Per-feature z-score across the candidate pool; constant columns -> 0.

    Pool-relative scaling matters: early in training the probing losses of
    all clients are nearly identical, and without the rescaling their tiny
    differences -- which drive loss-based selection -- would be invisible
    next to the cost features.
    """
    if isinstance(raw, np.ndarray):
        mat = np.asarray(raw, dtype=np.float64)
    else:
        mat = np.stack([o.features() for o in raw])
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    out = np.zeros_like(mat)
    nz = std > 0
    out[:, nz] = (mat[:, nz] - mean[nz]) / std[nz]
    return out


def q_forward(net: QNetwork, state: np.ndarray, use_target: bool = False) -> float:
    """Score a single 6-feature state row."""
    q, _ = net.forward(np.asarray(state).reshape(1, -1), use_target=use_target)
    return float(q[0])


def vdn_total(per_device_q: np.ndarray, mask: np.ndarray) -> float:
    """Sum of per-device values over the selected set."""
    q = np.asarray(per_device_q, dtype=np.float64)
    return float(q[np.asarray(mask, dtype=bool)].sum())


def select_topk(
    q_values: np.ndarray, k: int, explore_eps: float, rng: np.random.Generator
) -> np.ndarray:
    """Top-K by score (ties to lower id), with epsilon-greedy exploration.

    With probability explore_eps a uniformly sized subset of the top-K is
    swapped for random non-selected devices.
    """
    n = len(q_values)
    if not 1 <= k <= n:
        raise InvalidSpecError(f"K must be in [1, {n}], got {k}")
    ids = top_k_ids(np.asarray(q_values, dtype=np.float64), k)
    if explore_eps > 0 and k < n and rng.random() < explore_eps:
        m = int(rng.integers(1, min(k, n - k) + 1))
        out = rng.choice(k, size=m, replace=False)
        others = np.setdiff1d(np.arange(n), ids, assume_unique=False)
        incoming = rng.choice(others, size=m, replace=False)
        ids = np.sort(np.concatenate([np.delete(ids, out), incoming]))
    return mask_from_ids(ids, n)


def td_loss(
    batch: list[Transition], net: QNetwork, gamma: float, k: int
) -> tuple[float, np.ndarray]:
    """Mean squared TD error over a batch, and its gradient w.r.t. theta.

    Target: y = r + gamma * (top-K sum of target-net scores on the next
    state); y = r at terminal transitions.  Prediction: sum of predict-net
    scores over the stored action.
    """
    if not batch:
        raise InvalidSpecError("td_loss needs a non-empty batch")
    total = 0.0
    grad = np.zeros(net.num_params)
    for tr in batch:
        if tr.terminal:
            y = tr.reward
        else:
            q_next, _ = net.forward(tr.next_states, use_target=True)
            y = tr.reward + gamma * float(q_next[top_k_ids(q_next, k)].sum())
        q_pred, cache = net.forward(tr.states)
        y_hat = float(q_pred[tr.action].sum())
        resid = y_hat - y
        total += resid * resid
        dq = np.where(tr.action, 2.0 * resid / len(batch), 0.0)
        grad += net.backward(cache, dq)
    loss = total / len(batch)
    if not np.isfinite(loss):
        raise NumericFailureError(f"non-finite TD loss {loss}")
    return loss, grad


def pairwise_probs(q_i: float, q_j: float) -> float:
    """Logistic probability that device i outranks device j."""
    return float(1.0 / (1.0 + np.exp(-(q_i - q_j))))


def selection_boundary_pairs(
    mask: np.ndarray, max_pairs: int, rng: np.random.Generator
) -> np.ndarray:
    """Ordered (selected, unselected) pairs, subsampled to max_pairs."""
    sel = np.flatnonzero(mask)
    unsel = np.flatnonzero(~np.asarray(mask, dtype=bool))
    pairs = np.array([(i, j) for i in sel for j in unsel], dtype=np.int64)
    if len(pairs) > max_pairs:
        pairs = pairs[rng.choice(len(pairs), size=max_pairs, replace=False)]
    return pairs


def rank_loss_with_targets(
    q_pred: np.ndarray, pairs: np.ndarray, target_probs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean pairwise BCE against given target probabilities.

    Returns the loss and its gradient w.r.t. the predicted score vector.
    Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before logs;
    the gradient is zero where the clamp saturates.
    """
    q_pred = np.asarray(q_pred, dtype=np.float64)
    if len(pairs) == 0:
        return 0.0, np.zeros_like(q_pred)
    i, j = pairs[:, 0], pairs[:, 1]
    raw_p = 1.0 / (1.0 + np.exp(-(q_pred[i] - q_pred[j])))
    p = np.clip(raw_p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    pbar = np.clip(np.asarray(target_probs, dtype=np.float64), 0.0, 1.0)
    losses = -(pbar * np.log(p) + (1.0 - pbar) * np.log(1.0 - p))
    loss = float(losses.mean())
    if not np.isfinite(loss):
        raise NumericFailureError(f"non-finite rank loss {loss}")
    unclamped = (raw_p > PROB_CLAMP) & (raw_p < 1.0 - PROB_CLAMP)
    ddiff = np.where(unclamped, (p - pbar) / len(pairs), 0.0)
    grad = np.zeros_like(q_pred)
    np.add.at(grad, i, ddiff)
    np.add.at(grad, j, -ddiff)
    return loss, grad


def rank_loss(
    q_pred: np.ndarray, q_target: np.ndarray, pairs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Pairwise BCE of predict-net probabilities against target-net soft labels."""
    q_target = np.asarray(q_target, dtype=np.float64)
    if len(pairs) == 0:
        return 0.0, np.zeros_like(np.asarray(q_pred, dtype=np.float64))
    i, j = pairs[:, 0], pairs[:, 1]
    pbar = 1.0 / (1.0 + np.exp(-(q_target[i] - q_target[j])))
    pbar = np.clip(pbar, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return rank_loss_with_targets(q_pred, pairs, pbar)


class RankingAgent:
    """Online learner: epsilon-greedy top-K acting plus joint TD/rank updates."""

    def __init__(self, n_devices: int, hp: AgentHyperparams, seed: int = 0):
        self.hp = hp
        self.n_devices = n_devices
        self.net = QNetwork(h1=hp.h1, h2=hp.h2, seed=seed)
        self.cache = ProfilerCache(hp.cache_capacity)
        self.rng = keyed_rng(seed, 0xA6E27)
        self.step = 0

    def explore_eps(self, progress: float) -> float:
        """Linear decay over the run; progress in [0, 1]."""
        p = min(max(progress, 0.0), 1.0)
        return self.hp.explore_start + (self.hp.explore_end - self.hp.explore_start) * p

    def act(self, states: np.ndarray, k: int, progress: float = 1.0) -> np.ndarray:
        q, _ = self.net.forward(states)
        return select_topk(q, k, self.explore_eps(progress), self.rng)

    def observe(self, transition: Transition) -> None:
        self.cache.push(transition)

    def joint_update(self, k: int) -> tuple[float, float]:
        """One SGD step on mean TD loss + rank_weight * mean rank loss.

        Samples a batch from the cache, syncs the target network every
        target_sync_period steps, and returns the two loss components.
        """
        batch = self.cache.sample(self.hp.batch_size, self.rng)
        td, grad = td_loss(batch, self.net, self.hp.gamma, k)
        rank_total = 0.0
        if self.hp.rank_weight > 0:
            for tr in batch:
                pairs = selection_boundary_pairs(tr.action, self.hp.max_pairs, self.rng)
                q_pred, cache = self.net.forward(tr.states)
                q_tgt, _ = self.net.forward(tr.states, use_target=True)
                r_loss, dq = rank_loss(q_pred, q_tgt, pairs)
                rank_total += r_loss
                grad += (self.hp.rank_weight / len(batch)) * self.net.backward(cache, dq)
            rank_total /= len(batch)
        self.net.theta = self.net.theta - self.hp.learning_rate * grad
        self.step += 1
        if self.step % self.hp.target_sync_period == 0:
            self.net.sync_target()
        return td, rank_total

    def save(self, path: str | Path) -> None:
        """Checkpoint theta, target, step counter, and RNG state."""
        header = {
            "version": AGENT_CHECKPOINT_VERSION,
            "n_devices": self.n_devices,
            "h1": self.hp.h1,
            "h2": self.hp.h2,
            "step": self.step,
            "rng_state": _jsonify(self.rng.bit_generator.state),
            "dtype": "<f8",
            "count": self.net.num_params,
        }
        with Path(path).open("wb") as fh:
            fh.write((json.dumps(header) + "\n").encode("utf-8"))
            fh.write(self.net.theta.astype("<f8").tobytes())
            fh.write(self.net.target.astype("<f8").tobytes())

    def load(self, path: str | Path) -> None:
        raw = Path(path).read_bytes()
        nl = raw.find(b"\n")
        if nl < 0:
            raise ParseError(f"{path}: missing header newline")
        header = json.loads(raw[:nl])
        if header.get("version") != AGENT_CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported agent checkpoint version")
        if header["h1"] != self.hp.h1 or header["h2"] != self.hp.h2:
            raise ParseError(f"{path}: checkpoint layer sizes do not match hyperparams")
        count = header["count"]
        self.net.theta = np.frombuffer(raw, dtype="<f8", count=count, offset=nl + 1).copy()
        self.net.target = np.frombuffer(
            raw, dtype="<f8", count=count, offset=nl + 1 + 8 * count
        ).copy()
        self.step = header["step"]
        self.rng.bit_generator.state = _unjsonify(header["rng_state"])


def _jsonify(obj):
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    return obj


def _unjsonify(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.asarray(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _unjsonify(v) for k, v in obj.items()}
    return obj
