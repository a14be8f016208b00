"""Command-line entry point.

Subcommands:
  run         one experiment from a config file (or the defaults)
  case-study  structured-topology protocol with Rand-index tracking
  sweep       propagation-depth x cluster-count grid, one result dir per cell
  compare     paired fedcedar-vs-fedavg run under one seed

Every command writes metrics.csv + details.json (plus figures) under the
output directory, which defaults to ./results and can be overridden with
--out or the FEDCEDAR_OUT environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    PeriodicActivation,
    config_echo,
    load_config,
)
from .data import topology_preset
from .figures import accuracy_figure, compare_figure, rand_index_figure, sweep_figure
from .metrics import write_records
from .simulation import run_experiment

SWEEP_DEPTHS = (1, 2, 3, 4, 5)
SWEEP_CLUSTERS = (3, 4, 5, 6, 7)


def _default_out() -> str:
    return os.environ.get("FEDCEDAR_OUT", "results")


def _load_base_config(path: str | None) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _run_and_write(config: ExperimentConfig, out_dir: Path) -> list:
    records = run_experiment(config)
    write_records(records, out_dir, config_echo(config))
    return records


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load_base_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.algorithm is not None:
        overrides["algorithm"] = args.algorithm
    if overrides:
        config = dataclasses.replace(config, **overrides)
    out_dir = Path(args.out)
    records = _run_and_write(config, out_dir)
    accuracy_figure(records, out_dir / "accuracy.png")
    final = records[-1].mean_accuracy if records else float("nan")
    print(f"{config.algorithm}: {config.rounds} rounds, final mean accuracy {final:.4f}")
    print(f"results written to {out_dir}")
    return 0


def _case_study_config(args: argparse.Namespace) -> ExperimentConfig:
    topo = topology_preset(args.topology)
    clusters = args.clusters if args.clusters is not None else topo.node_count
    base = _load_base_config(args.config)
    data = dataclasses.replace(
        base.data, partition="topology", topology=args.topology
    )
    periodic = dataclasses.replace(
        base.periodic_activation or PeriodicActivation(), period=args.period
    )
    return dataclasses.replace(
        base,
        algorithm="fedcedar",
        client_count=topo.client_count,
        cluster_count=clusters,
        rounds=args.rounds,
        master_seed=args.seed if args.seed is not None else base.master_seed,
        data=data,
        periodic_activation=periodic,
    )


def _cmd_case_study(args: argparse.Namespace) -> int:
    config = _case_study_config(args)
    out_dir = Path(args.out)
    records = _run_and_write(config, out_dir)
    rand_index_figure(records, out_dir / "rand_index.png")
    accuracy_figure(records, out_dir / "accuracy.png")
    trace = [(r.round_index, r.rand_index) for r in records if r.rand_index is not None]
    print(
        f"topology {args.topology}, K={config.cluster_count}: "
        f"{len(trace)} Rand-index samples over {config.rounds} rounds"
    )
    if trace:
        print(f"  first {trace[0][1]:.4f}  min {min(v for _, v in trace):.4f}  "
              f"last {trace[-1][1]:.4f}")
    print(f"results written to {out_dir}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    base = _load_base_config(args.config)
    if args.seed is not None:
        base = dataclasses.replace(base, master_seed=args.seed)
    if args.rounds is not None:
        base = dataclasses.replace(base, rounds=args.rounds)
    out_dir = Path(args.out)
    final_acc: dict[tuple[int, int], float] = {}
    for depth in SWEEP_DEPTHS:
        for clusters in SWEEP_CLUSTERS:
            cell = dataclasses.replace(
                base, propagation_depth=depth, cluster_count=clusters
            )
            cell_dir = out_dir / f"P{depth}_K{clusters}"
            records = _run_and_write(cell, cell_dir)
            final_acc[(depth, clusters)] = records[-1].mean_accuracy if records else float("nan")
            print(
                f"P={depth} K={clusters}: final mean accuracy "
                f"{final_acc[(depth, clusters)]:.4f}"
            )
    summary = out_dir / "sweep_summary.csv"
    lines = ["propagation_depth,cluster_count,final_mean_accuracy"]
    for (depth, clusters), acc in sorted(final_acc.items()):
        lines.append(f"{depth},{clusters},{acc}")
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if base.rounds > 0:
        sweep_figure(final_acc, out_dir / "sweep.png")
    print(f"sweep summary written to {summary}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    base = _load_base_config(args.config)
    if args.seed is not None:
        base = dataclasses.replace(base, master_seed=args.seed)
    out_dir = Path(args.out)
    runs = {}
    for algorithm in ("fedcedar", "fedavg"):
        config = dataclasses.replace(base, algorithm=algorithm)
        runs[algorithm] = _run_and_write(config, out_dir / algorithm)
    compare_figure(runs, out_dir / "compare.png")
    gap = None
    if runs["fedcedar"] and runs["fedavg"]:
        gap = runs["fedcedar"][-1].mean_accuracy - runs["fedavg"][-1].mean_accuracy
        lines = ["round,fedcedar_mean_accuracy,fedavg_mean_accuracy"]
        for a, b in zip(runs["fedcedar"], runs["fedavg"]):
            lines.append(f"{a.round_index},{float(a.mean_accuracy)},{float(b.mean_accuracy)}")
        lines.append(f"final_gap,{float(gap)},")
        (out_dir / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(
            f"final mean accuracy: fedcedar {runs['fedcedar'][-1].mean_accuracy:.4f}, "
            f"fedavg {runs['fedavg'][-1].mean_accuracy:.4f}, gap {gap:+.4f}"
        )
    print(f"results written to {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcedar",
        description="Clustered personalized federated learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment")
    run_p.add_argument("--config", help="JSON config path (defaults when omitted)")
    run_p.add_argument("--seed", type=int, help="master seed override")
    run_p.add_argument("--out", default=_default_out(), help="output directory")
    run_p.add_argument(
        "--algorithm",
        choices=("fedcedar", "fedavg", "as1", "as2", "as3"),
        help="algorithm override",
    )
    run_p.set_defaults(func=_cmd_run)

    case_p = sub.add_parser("case-study", help="structured-topology Rand-index study")
    case_p.add_argument("--topology", type=int, choices=(1, 2, 3), required=True)
    case_p.add_argument("--clusters", type=int, help="cluster count (default: node count)")
    case_p.add_argument("--rounds", type=int, default=200)
    case_p.add_argument("--period", type=int, default=5)
    case_p.add_argument("--seed", type=int, help="master seed override")
    case_p.add_argument("--config", help="JSON config with base settings")
    case_p.add_argument("--out", default=_default_out(), help="output directory")
    case_p.set_defaults(func=_cmd_case_study)

    sweep_p = sub.add_parser("sweep", help="grid over propagation depth x clusters")
    sweep_p.add_argument("--config", help="JSON config path")
    sweep_p.add_argument("--seed", type=int, help="master seed override")
    sweep_p.add_argument("--rounds", type=int, help="rounds override for every cell")
    sweep_p.add_argument("--out", default=_default_out(), help="output directory")
    sweep_p.set_defaults(func=_cmd_sweep)

    cmp_p = sub.add_parser("compare", help="paired fedcedar vs fedavg run")
    cmp_p.add_argument("--config", help="JSON config path")
    cmp_p.add_argument("--seed", type=int, help="master seed for both runs")
    cmp_p.add_argument("--out", default=_default_out(), help="output directory")
    cmp_p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
