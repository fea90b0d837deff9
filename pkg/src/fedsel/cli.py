"""Command-line entry point.

Subcommands:
  run              run a full experiment from a JSON config
  pretrain         clone experts offline and save the agent checkpoint
  compare          tabulate energy/speed of runs against a baseline
  partition-stats  describe the client shards a config would produce
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

import numpy as np

from .config import load_config
from .data import label_entropy, label_histogram, load_dataset, partition
from .orchestrator import build_pretrained_agent, compare_runs, run_experiment
from .rng import stream_int


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            seed=args.seed,
            partition=dataclasses.replace(cfg.partition, seed=args.seed),
        )
    summary = run_experiment(cfg, args.out)
    print(json.dumps({k: summary[k] for k in (
        "policy", "seed", "final_accuracy", "rounds_to_target", "total_time", "total_energy"
    )}, indent=2))
    print(f"wrote {args.out}/rounds.csv and {args.out}/summary.json")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    if cfg.policy.name != "fedrank" or cfg.policy.pretrain is None:
        print("config must set policy.name = 'fedrank' with a policy.pretrain section", file=sys.stderr)
        return 2
    agent = build_pretrained_agent(cfg)
    agent.save(args.out)
    print(f"wrote pretrained agent checkpoint to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    rows = compare_runs(args.summaries)
    header = f"{'policy':<16}{'final_acc':>10}{'rounds':>8}{'speed':>8}{'energy%':>9}  reached"
    print(header)
    for r in rows:
        speed = f"{r['speed']:.2f}x" if r["speed"] is not None else "null"
        energy = f"{r['energy_pct']:.1f}" if r["energy_pct"] is not None else "null"
        rounds = r["rounds_to_target"] if r["rounds_to_target"] is not None else "null"
        print(
            f"{r['policy']:<16}{r['final_accuracy']:>10.4f}{rounds!s:>8}{speed:>8}"
            f"{energy:>9}  {r['reached_target']}"
        )
    return 0


def _cmd_partition_stats(args) -> int:
    cfg = load_config(args.config)
    source = dict(cfg.dataset)
    if "synthetic" in source:
        syn = dict(source["synthetic"])
        syn.setdefault("seed", stream_int(cfg.seed, "data"))
        source["synthetic"] = syn
    dataset = load_dataset(source)
    shards = partition(dataset, cfg.partition)
    sizes = np.array([s.size for s in shards])
    entropies = np.array([label_entropy(dataset, s) for s in shards])
    print(f"clients: {len(shards)}  examples: {len(dataset)}  classes: {dataset.num_classes}")
    print(f"shard size  min/median/max: {sizes.min()}/{int(np.median(sizes))}/{sizes.max()}")
    print(f"label entropy mean: {entropies.mean():.4f} nats (uniform = {np.log(dataset.num_classes):.4f})")
    if args.verbose:
        for s in shards:
            print(f"  client {s.client_id:>4}: size {s.size:>6}  hist {label_histogram(dataset, s).tolist()}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fedsel", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("pretrain", help="imitation-pretrain the ranking agent")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("compare", help="compare run summaries (first = baseline)")
    p.add_argument("summaries", nargs="+")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("partition-stats", help="describe the configured partition")
    p.add_argument("--config", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=_cmd_partition_stats)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
