"""End-to-end experiment driver: rounds, metrics files, run comparison."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import RankingAgent, Transition, normalize_states
from .config import ExperimentConfig, PolicySpec, SCHEMA_VERSION
from .data import Dataset, load_dataset, partition
from .errors import InvalidActionError, InvalidSpecError, NumericFailureError
from .imitation import collect_demonstrations, pretrain
from .models import ModelShape, init_params
from .policies import (
    CandidateObservation,
    GreedyLatencyPolicy,
    GreedyLossPolicy,
    OortPolicy,
    Policy,
    RandomPolicy,
    TierPolicy,
)
from .reward import compute_reward
from .rng import derive_int, stream_int, stream_rng
from .system import VariationTrace, realize_round_costs, round_energy, round_latency, sample_profiles
from .training import (
    TrainConfig,
    evaluate,
    fedavg_aggregate,
    finish_local_training,
    probe_epoch,
    weight_divergence,
)

logger = logging.getLogger("fedsel")

CSV_HEADER = [
    "t", "selected", "acc", "delta_acc", "r_t", "r_e", "reward",
    "cum_time", "cum_energy", "divergence", "td_loss", "rank_loss",
]


@dataclass
class RoundRecord:
    t: int
    selected: list[int]
    acc: float
    delta_acc: float
    r_t: float
    r_e: float
    reward: float
    cum_time: float
    cum_energy: float
    divergence: float
    td_loss: float | None = None
    rank_loss: float | None = None

    def csv_row(self) -> list:
        fmt = lambda v: "" if v is None else repr(v)
        return [
            self.t, "|".join(map(str, self.selected)), repr(self.acc), repr(self.delta_acc),
            repr(self.r_t), repr(self.r_e), repr(self.reward), repr(self.cum_time),
            repr(self.cum_energy), repr(self.divergence), fmt(self.td_loss), fmt(self.rank_loss),
        ]


class FLEnvironment:
    """One federated-learning run: dataset, device pool, and global model.

    Seed streams are split by label from the master seed, so two runs that
    differ only in policy see identical data partitions and device pools.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        master = cfg.seed

        source = dict(cfg.dataset)
        if "synthetic" in source:
            syn = dict(source["synthetic"])
            syn.setdefault("seed", stream_int(master, "data"))
            source["synthetic"] = syn
        full = load_dataset(source)

        split_rng = stream_rng(master, "data-split")
        perm = split_rng.permutation(len(full))
        n_test = max(1, round(cfg.test_fraction * len(full)))
        test_idx, train_idx = np.sort(perm[:n_test]), np.sort(perm[n_test:])
        self.test_set = Dataset(full.features[test_idx], full.labels[test_idx], full.num_classes)
        self.train_set = Dataset(full.features[train_idx], full.labels[train_idx], full.num_classes)

        self.shards = partition(self.train_set, cfg.partition)
        self.profiles = sample_profiles(
            cfg.partition.num_clients, cfg.system, stream_int(master, "system")
        )
        self.trace = VariationTrace.load(cfg.system.trace_path) if cfg.system.trace_path else None
        self._variation_seed = stream_int(master, "system-rt")
        self._train_root = stream_int(master, "train")

        d = self.train_set.features.shape[1]
        c = full.num_classes
        if cfg.model.kind == "softmax_regression":
            shape = ModelShape(cfg.model.kind, (d, c))
        else:
            shape = ModelShape(cfg.model.kind, (d, cfg.model.hidden, c))
        self.global_params = init_params(shape)
        self.prev_acc, _ = evaluate(self.global_params, self.test_set)
        self.cum_time = 0.0
        self.cum_energy = 0.0
        self._pending_round: dict | None = None

    @property
    def clients_per_round(self) -> int:
        return self.cfg.clients_per_round

    @property
    def num_clients(self) -> int:
        return self.cfg.partition.num_clients

    def _train_cfg(self, client_id: int, t: int) -> TrainConfig:
        # per-(run, client, round) batch schedule, replayable by oracles
        return TrainConfig(
            learning_rate=self.cfg.train.learning_rate,
            batch_size=self.cfg.train.batch_size,
            local_epochs=self.cfg.train.local_epochs,
            seed=derive_int(self._train_root, client_id, t),
        )

    def observe(self, t: int) -> tuple[list[CandidateObservation], np.ndarray]:
        """Probing phase: every candidate runs one epoch and reports state."""
        costs = realize_round_costs(self.profiles, t, self.cfg.system, self._variation_seed, self.trace)
        observations: list[CandidateObservation] = []
        probed = []
        cfgs = []
        for shard in self.shards:
            cid = shard.client_id
            tcfg = self._train_cfg(cid, t)
            params, _, batch_losses = probe_epoch(
                self.global_params, self.train_set, shard, tcfg
            )
            probed.append(params)
            cfgs.append(tcfg)
            # report the RMS batch loss: the same statistic the utility
            # formulas rank by, so the scoring network sees what experts see
            rms_loss = float(np.sqrt(np.mean(np.square(batch_losses))))
            observations.append(
                CandidateObservation(
                    client_id=cid,
                    t_comp=float(costs.t_comp[cid]),
                    t_comm=float(costs.t_comm[cid]),
                    e_comp=float(costs.e_comp[cid]),
                    e_comm=float(costs.e_comm[cid]),
                    probing_loss=rms_loss,
                    data_size=shard.size,
                    batch_losses=tuple(batch_losses),
                )
            )
        self._pending_round = {"t": t, "costs": costs, "probed": probed, "cfgs": cfgs}
        return observations, normalize_states(observations)

    def apply_selection(self, t: int, mask: np.ndarray) -> RoundRecord:
        """Finish training for the selected set, aggregate, score the round."""
        pend = self._pending_round
        if pend is None or pend["t"] != t:
            raise InvalidSpecError(f"apply_selection({t}) without a matching observe()")
        self._pending_round = None
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (self.num_clients,):
            raise InvalidActionError("selection mask has the wrong length")
        if int(mask.sum()) != self.clients_per_round:
            raise InvalidActionError(
                f"selection must pick exactly {self.clients_per_round} devices"
            )

        selected = [int(i) for i in np.flatnonzero(mask)]
        updates, locals_ = [], []
        for cid in selected:  # ascending client id keeps aggregation reproducible
            try:
                final = finish_local_training(
                    pend["probed"][cid], self.train_set, self.shards[cid], pend["cfgs"][cid]
                )
            except NumericFailureError as exc:
                logger.warning("round %d: dropping client %d (%s)", t, cid, exc)
                continue
            updates.append((final, self.shards[cid].size))
            locals_.append(final)
        if not updates:
            raise NumericFailureError(f"round {t}: every selected client failed")

        self.global_params = fedavg_aggregate(updates)
        divergence = weight_divergence(self.global_params, locals_)
        acc, _ = evaluate(self.global_params, self.test_set)
        delta_acc = acc - self.prev_acc
        self.prev_acc = acc

        cost_mask = mask if self.cfg.probing else np.ones(self.num_clients, dtype=bool)
        r_t = round_latency(pend["costs"], cost_mask, self.cfg.train.local_epochs)
        r_e = round_energy(pend["costs"], cost_mask, self.cfg.train.local_epochs)
        rew = compute_reward(delta_acc, r_t, r_e, self.cfg.reward)
        self.cum_time += r_t
        self.cum_energy += r_e
        return RoundRecord(
            t=t, selected=selected, acc=acc, delta_acc=delta_acc, r_t=r_t, r_e=r_e,
            reward=rew, cum_time=self.cum_time, cum_energy=self.cum_energy,
            divergence=divergence,
        )


def make_baseline_policy(name: str, cfg: ExperimentConfig) -> Policy:
    l_ep = cfg.train.local_epochs
    if name == "random":
        return RandomPolicy(seed=stream_int(cfg.seed, "policy"))
    if name == "oort":
        return OortPolicy(cfg.reward.latency_budget, cfg.reward.alpha, l_ep)
    if name == "tier":
        return TierPolicy(cfg.policy.num_tiers, l_ep)
    if name == "greedy_loss":
        return GreedyLossPolicy()
    if name == "greedy_latency":
        return GreedyLatencyPolicy(l_ep)
    raise InvalidSpecError(f"unknown baseline policy {name!r}")


def build_pretrained_agent(cfg: ExperimentConfig) -> RankingAgent:
    """Create the ranking agent, cloning experts offline when configured."""
    agent = RankingAgent(
        cfg.partition.num_clients, cfg.policy.agent, seed=stream_int(cfg.seed, "agent")
    )
    if cfg.policy.checkpoint:
        agent.load(cfg.policy.checkpoint)
        return agent
    spec = cfg.policy.pretrain
    if spec is None:
        return agent
    demos = collect_demonstrations(
        experts=[make_baseline_policy(e, cfg) for e in spec.experts],
        env_factory=lambda e_idx, seed: FLEnvironment(
            dataclasses.replace(cfg, seed=derive_int(seed, 0x11, e_idx))
        ),
        rounds=spec.rounds,
        seed=stream_int(cfg.seed, "agent"),
    )
    pretrain(
        agent.net, demos, spec.epochs, spec.batch_size, spec.learning_rate,
        seed=stream_int(cfg.seed, "agent-pretrain"),
        max_pairs=cfg.policy.agent.max_pairs, loss_kind=spec.loss,
    )
    return agent


def run_rounds(cfg: ExperimentConfig, agent: RankingAgent | None = None) -> list[RoundRecord]:
    """Execute all rounds of one experiment, returning the record stream."""
    env = FLEnvironment(cfg)
    k = cfg.clients_per_round
    policy = None
    if cfg.policy.name == "fedrank":
        if agent is None:
            agent = build_pretrained_agent(cfg)
    else:
        policy = make_baseline_policy(cfg.policy.name, cfg)

    records: list[RoundRecord] = []
    pending = None  # (states, mask, reward) awaiting the next state
    for t in range(cfg.rounds):
        observations, states = env.observe(t)
        if agent is not None:
            if pending is not None:
                agent.observe(Transition(*pending, next_states=states, terminal=False))
            mask = agent.act(states, k, progress=t / max(1, cfg.rounds - 1))
        else:
            mask = policy.select(observations, k)
        record = env.apply_selection(t, mask)
        if agent is not None:
            pending = (states, mask, record.reward)
            if t == cfg.rounds - 1:
                agent.observe(Transition(*pending, next_states=states, terminal=True))
            if len(agent.cache):
                record.td_loss, record.rank_loss = agent.joint_update(k)
        records.append(record)
    return records


def summarize(cfg: ExperimentConfig, records: list[RoundRecord]) -> dict:
    accs = [r.acc for r in records]
    target = cfg.target_accuracy
    rounds_to_target = None
    if target is not None:
        reached = [r.t + 1 for r in records if r.acc >= target]
        rounds_to_target = reached[0] if reached else None
    return {
        "schema_version": SCHEMA_VERSION,
        "policy": cfg.policy.name,
        "seed": cfg.seed,
        "rounds": cfg.rounds,
        "final_accuracy": accs[-1],
        "target_accuracy": target,
        "rounds_to_target": rounds_to_target,
        "total_time": records[-1].cum_time,
        "total_energy": records[-1].cum_energy,
        "mean_reward_first_10": float(np.mean([r.reward for r in records[:10]])),
        "acc_per_round": accs,
        "cum_time_per_round": [r.cum_time for r in records],
        "cum_energy_per_round": [r.cum_energy for r in records],
        "reward_per_round": [r.reward for r in records],
    }


def write_outputs(cfg: ExperimentConfig, records: list[RoundRecord], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "rounds.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(r.csv_row())
    summary = summarize(cfg, records)
    with (out / "summary.json").open("w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> dict:
    """Run all rounds (with optional IL pretraining) and write metrics files."""
    records = run_rounds(cfg)
    return write_outputs(cfg, records, out_dir)


def _rounds_and_energy_to(summary: dict, target: float) -> tuple[int | None, float | None]:
    for i, acc in enumerate(summary["acc_per_round"]):
        if acc >= target:
            return i + 1, summary["cum_energy_per_round"][i]
    return None, None


def compare_runs(summary_paths: list[str | Path]) -> list[dict]:
    """Relative energy/speed of each run against the first (the baseline).

    Speed = baseline rounds-to-target / candidate rounds-to-target; energy
    is the candidate's cumulative energy at the target accuracy as a
    percentage of the baseline's.  Target = the baseline's configured
    target accuracy, else its final accuracy.
    """
    if not summary_paths:
        raise InvalidSpecError("compare_runs needs at least one summary file")
    summaries = []
    for p in summary_paths:
        with Path(p).open() as fh:
            summaries.append(json.load(fh))
    base = summaries[0]
    target = base.get("target_accuracy") or base["final_accuracy"]
    base_rounds, base_energy = _rounds_and_energy_to(base, target)
    rows = []
    for s in summaries:
        rounds, energy = _rounds_and_energy_to(s, target)
        reached = rounds is not None
        rows.append(
            {
                "policy": s["policy"],
                "final_accuracy": s["final_accuracy"],
                "rounds_to_target": rounds,
                "speed": (base_rounds / rounds) if reached and base_rounds else None,
                "energy_pct": (100.0 * energy / base_energy) if reached and base_energy else None,
                "reached_target": reached,
            }
        )
    return rows
