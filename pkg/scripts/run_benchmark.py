#!/usr/bin/env python3
"""Run the heterogeneous-pool benchmark across selection policies.

Writes one output directory per (policy, seed) with rounds.csv and
summary.json, then prints a comparison table against the random baseline.

Usage:
    python3 scripts/run_benchmark.py --out runs/ [--seeds 0 1 2] [--rounds 50]
"""

import argparse
import json
from pathlib import Path

from fedsel.config import config_from_dict
from fedsel.orchestrator import compare_runs, run_experiment

POLICIES = ("random", "oort", "tier", "greedy_loss", "greedy_latency", "fedrank")


def benchmark_dict(policy: str, seed: int, rounds: int) -> dict:
    raw = {
        "schema_version": 1,
        "dataset": {
            "synthetic": {"num_classes": 10, "dims": 20, "samples": 8000, "cluster_spread": 1.0}
        },
        "partition": {"num_clients": 100, "regime": "dirichlet", "sigma": 0.1},
        "clients_per_round": 10,
        "rounds": rounds,
        "train": {"learning_rate": 0.002, "batch_size": 16, "local_epochs": 5},
        "system": {
            "comp_time_base": 1.0, "comp_time_sigma": 0.6,
            "comm_time_base": 0.5, "comm_time_sigma": 0.6,
            "comp_power_base": 2.0, "comp_power_sigma": 0.5,
            "comm_power_base": 5.0, "comm_power_sigma": 0.5,
            "runtime_sigma": 0.1, "report_time": 0.05,
        },
        "reward": {"latency_budget": 15.0, "energy_budget": 400.0},
        "policy": {"name": policy},
        "seed": seed,
    }
    if policy == "fedrank":
        raw["policy"] = {
            "name": "fedrank",
            "agent": {"explore_start": 0.05, "explore_end": 0.02},
            "pretrain": {
                "experts": ["greedy_loss"], "rounds": 20, "epochs": 60,
                "batch_size": 16, "learning_rate": 0.05,
            },
        }
    return raw


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs", help="output root directory")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--policies", nargs="+", default=list(POLICIES), choices=POLICIES)
    args = ap.parse_args()

    root = Path(args.out)
    for seed in args.seeds:
        paths = []
        for policy in args.policies:
            cfg = config_from_dict(benchmark_dict(policy, seed, args.rounds))
            out_dir = root / f"seed{seed}" / policy
            summary = run_experiment(cfg, out_dir)
            paths.append(out_dir / "summary.json")
            print(
                f"seed {seed} {policy:>14}: acc {summary['final_accuracy']:.3f} "
                f"time {summary['total_time']:.0f}s energy {summary['total_energy']:.0f}J"
            )
        rows = compare_runs(paths)
        (root / f"seed{seed}" / "comparison.json").write_text(json.dumps(rows, indent=2))
        print(f"seed {seed} comparison (baseline = {rows[0]['policy']}):")
        for row in rows:
            speed = f"{row['speed']:.2f}x" if row["speed"] else "n/a"
            energy = f"{row['energy_pct']:.0f}%" if row["energy_pct"] else "n/a"
            print(f"    {row['policy']:>14}: speed {speed}, energy {energy}")


if __name__ == "__main__":
    main()
