"""Experiment configuration: dataclasses plus the JSON schema (version 1)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentHyperparams
from .data import PartitionSpec
from .errors import InvalidSpecError
from .reward import RewardParams
from .system import HeterogeneitySpec

SCHEMA_VERSION = 1

POLICY_NAMES = ("random", "oort", "tier", "greedy_loss", "greedy_latency", "fedrank")


@dataclass(frozen=True)
class ModelSpec:
    """Local model family."""

    kind: str = "softmax_regression"  # or "mlp1"
    hidden: int = 32  # hidden width, mlp1 only


@dataclass(frozen=True)
class LocalTrainSpec:
    learning_rate: float = 0.1
    batch_size: int = 32
    local_epochs: int = 5

    def __post_init__(self):
        if self.local_epochs < 1:
            raise InvalidSpecError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidSpecError("batch_size must be >= 1")


@dataclass(frozen=True)
class PretrainSpec:
    """Imitation-learning settings for the ranking agent."""

    experts: tuple[str, ...] = ("oort", "greedy_latency", "greedy_loss")
    rounds: int = 20  # demonstration rounds per expert
    epochs: int = 60
    batch_size: int = 16
    learning_rate: float = 0.05
    loss: str = "pairwise"  # or "pointwise"

    def __post_init__(self):
        if not self.experts:
            raise InvalidSpecError("pretraining needs at least one expert")
        for e in self.experts:
            if e not in ("oort", "greedy_latency", "greedy_loss", "tier", "random"):
                raise InvalidSpecError(f"unknown expert policy {e!r}")


@dataclass(frozen=True)
class PolicySpec:
    name: str = "random"
    num_tiers: int = 4  # tier policy only
    agent: AgentHyperparams = field(default_factory=AgentHyperparams)
    pretrain: PretrainSpec | None = None  # fedrank only; None = scratch
    checkpoint: str | None = None  # load pretrained agent weights

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise InvalidSpecError(f"unknown policy {self.name!r}; expected one of {POLICY_NAMES}")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    partition: PartitionSpec
    clients_per_round: int
    rounds: int
    model: ModelSpec = field(default_factory=ModelSpec)
    train: LocalTrainSpec = field(default_factory=LocalTrainSpec)
    system: HeterogeneitySpec = field(default_factory=HeterogeneitySpec)
    reward: RewardParams = field(default_factory=lambda: RewardParams(10.0, 100.0))
    policy: PolicySpec = field(default_factory=PolicySpec)
    seed: int = 0
    test_fraction: float = 0.2
    probing: bool = True  # False = vanilla accounting (no early exit savings)
    target_accuracy: float | None = None

    def __post_init__(self):
        if self.rounds < 1:
            raise InvalidSpecError("rounds must be >= 1")
        if not 1 <= self.clients_per_round <= self.partition.num_clients:
            raise InvalidSpecError("clients_per_round must be in [1, num_clients]")
        if not 0 < self.test_fraction < 1:
            raise InvalidSpecError("test_fraction must be in (0, 1)")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config from parsed JSON."""
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise InvalidSpecError(f"unsupported config schema_version {version!r}")
    if "dataset" not in raw or "partition" not in raw:
        raise InvalidSpecError("config requires 'dataset' and 'partition' sections")

    part = dict(raw["partition"])
    part.setdefault("seed", raw.get("seed", 0))
    policy_raw = dict(raw.get("policy", {}))
    agent_hp = AgentHyperparams(**policy_raw.pop("agent", {}))
    pre_raw = policy_raw.pop("pretrain", None)
    pretrain = None
    if pre_raw is not None:
        pre_raw = dict(pre_raw)
        if "experts" in pre_raw:
            pre_raw["experts"] = tuple(pre_raw["experts"])
        pretrain = PretrainSpec(**pre_raw)

    return ExperimentConfig(
        dataset=raw["dataset"],
        partition=PartitionSpec(**part),
        clients_per_round=raw.get("clients_per_round", 10),
        rounds=raw.get("rounds", 50),
        model=ModelSpec(**raw.get("model", {})),
        train=LocalTrainSpec(**raw.get("train", {})),
        system=HeterogeneitySpec(**raw.get("system", {})),
        reward=RewardParams(**raw.get("reward", {"latency_budget": 10.0, "energy_budget": 100.0})),
        policy=PolicySpec(agent=agent_hp, pretrain=pretrain, **policy_raw),
        seed=raw.get("seed", 0),
        test_fraction=raw.get("test_fraction", 0.2),
        probing=raw.get("probing", True),
        target_accuracy=raw.get("target_accuracy"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    with Path(path).open() as fh:
        return config_from_dict(json.load(fh))
