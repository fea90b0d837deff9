"""Offline pretraining of the scoring network by behavioral cloning.

Demonstrations are collected by running full federated-learning episodes
driven by analytical expert policies; the network is then trained to
reproduce the experts' selections with a pairwise loss on (selected,
unselected) pairs, eliminating the cold start of a scratch-trained agent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import QNetwork, rank_loss_with_targets, selection_boundary_pairs
from .errors import InvalidSpecError, ParseError
from .rng import keyed_rng

DEMO_FILE_VERSION = 1


@dataclass(frozen=True)
class Demonstration:
    """One expert decision: pool state, expert mask, and expert ordering."""

    states: np.ndarray = field(repr=False)  # (N, 6) normalized
    action: np.ndarray = field(repr=False)  # (N,) bool
    ordering: np.ndarray = field(repr=False)  # permutation of N, best first

    def __post_init__(self):
        n = len(self.states)
        if self.action.shape != (n,) or self.ordering.shape != (n,):
            raise InvalidSpecError("demonstration shapes disagree")
        k = int(self.action.sum())
        if not np.array_equal(np.sort(self.ordering[:k]), np.flatnonzero(self.action)):
            raise InvalidSpecError("ordering must place the selected devices first")


def expert_ordering(scores: np.ndarray | None, mask: np.ndarray) -> np.ndarray:
    """Full device ordering consistent with a selection mask.

    With expert scores: descending score (ties by lower id).  Without:
    selected ids first, then the rest, each in id order.
    """
    n = len(mask)
    if scores is None:
        return np.concatenate([np.flatnonzero(mask), np.flatnonzero(~mask)])
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(n), -scores))  # descending, ties by lower id
    sel = [i for i in order if mask[i]]
    unsel = [i for i in order if not mask[i]]
    return np.asarray(sel + unsel, dtype=np.int64)


def collect_demonstrations(experts: list, env_factory, rounds: int, seed: int) -> list[Demonstration]:
    """Run one FL episode per expert, recording its decision each round.

    env_factory(expert_index, seed) must build a fresh environment exposing
    observe(t) -> (observations, normalized states) and
    apply_selection(t, mask) advancing the global model.
    """
    if not experts:
        raise InvalidSpecError("need at least one expert")
    demos: list[Demonstration] = []
    for e_idx, expert in enumerate(experts):
        env = env_factory(e_idx, seed)
        for t in range(rounds):
            observations, states = env.observe(t)
            mask = expert.select(observations, env.clients_per_round)
            scores = expert.scores(observations) if hasattr(expert, "scores") else None
            demos.append(
                Demonstration(
                    states=states, action=mask, ordering=expert_ordering(scores, mask)
                )
            )
            env.apply_selection(t, mask)
    return demos


def pretrain(
    net: QNetwork,
    demos: list[Demonstration],
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
    max_pairs: int = 256,
    loss_kind: str = "pairwise",
) -> list[float]:
    """Clone the experts into the scoring network; returns per-epoch losses.

    pairwise: BCE with hard targets P = 1 on every (selected, unselected)
    pair.  pointwise: per-device BCE of sigmoid(q) against the mask, kept
    as an ablation alternative.  The target copy is synced at the end.
    """
    if not demos:
        raise InvalidSpecError("demonstration set is empty")
    if loss_kind not in ("pairwise", "pointwise"):
        raise InvalidSpecError(f"unknown cloning loss {loss_kind!r}")
    rng = keyed_rng(seed)
    curve: list[float] = []
    for _epoch in range(epochs):
        order = rng.permutation(len(demos))
        epoch_loss = 0.0
        for start in range(0, len(order), batch_size):
            batch = [demos[i] for i in order[start : start + batch_size]]
            grad = np.zeros(net.num_params)
            batch_loss = 0.0
            for demo in batch:
                q, cache = net.forward(demo.states)
                if loss_kind == "pairwise":
                    pairs = selection_boundary_pairs(demo.action, max_pairs, rng)
                    loss, dq = rank_loss_with_targets(q, pairs, np.ones(len(pairs)))
                else:
                    p = 1.0 / (1.0 + np.exp(-q))
                    y = demo.action.astype(np.float64)
                    p_c = np.clip(p, 1e-7, 1 - 1e-7)
                    loss = float(-(y * np.log(p_c) + (1 - y) * np.log(1 - p_c)).mean())
                    dq = (p - y) / len(q)
                batch_loss += loss
                grad += net.backward(cache, dq) / len(batch)
            net.theta = net.theta - learning_rate * grad
            epoch_loss += batch_loss / len(batch)
        curve.append(epoch_loss / max(1, -(-len(order) // batch_size)))
    net.sync_target()
    return curve


def topk_agreement(mask: np.ndarray, expert_mask: np.ndarray, k: int) -> float:
    """|selected intersection expert-selected| / K."""
    if k < 1:
        raise InvalidSpecError("K must be positive")
    both = np.asarray(mask, dtype=bool) & np.asarray(expert_mask, dtype=bool)
    return float(both.sum()) / k


def save_demonstrations(demos: list[Demonstration], path: str | Path) -> None:
    """Versioned binary file: JSON header line, then packed demonstrations."""
    header = {
        "version": DEMO_FILE_VERSION,
        "count": len(demos),
        "pool_size": len(demos[0].states) if demos else 0,
        "features": int(demos[0].states.shape[1]) if demos else 0,
    }
    with Path(path).open("wb") as fh:
        fh.write((json.dumps(header) + "\n").encode("utf-8"))
        for d in demos:
            fh.write(d.states.astype("<f8").tobytes())
            fh.write(d.action.astype("<u1").tobytes())
            fh.write(d.ordering.astype("<i4").tobytes())


def load_demonstrations(path: str | Path) -> list[Demonstration]:
    path = Path(path)
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ParseError(f"{path}: missing header newline")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON header at byte {exc.pos}") from None
    if header.get("version") != DEMO_FILE_VERSION:
        raise ParseError(f"{path}: unsupported demonstration file version")
    n, f = header["pool_size"], header["features"]
    record = 8 * n * f + n + 4 * n
    offset = nl + 1
    demos = []
    for idx in range(header["count"]):
        if offset + record > len(raw):
            raise ParseError(f"{path}: truncated record {idx} at byte {offset}")
        states = np.frombuffer(raw, dtype="<f8", count=n * f, offset=offset).reshape(n, f)
        offset += 8 * n * f
        action = np.frombuffer(raw, dtype="<u1", count=n, offset=offset).astype(bool)
        offset += n
        ordering = np.frombuffer(raw, dtype="<i4", count=n, offset=offset).astype(np.int64)
        offset += 4 * n
        demos.append(Demonstration(states=states.copy(), action=action, ordering=ordering))
    return demos
