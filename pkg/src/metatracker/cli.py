"""Command-line entry points.

Every subcommand shares the global flags --config/--seed/--variant/--out;
TrainConfig fields are additionally exposed as --train.<field> overrides.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .agent import TrainConfig, adapt_task
from .experiment import (
    VARIANTS,
    ExperimentConfig,
    build_tasks,
    load_config,
    run_seed,
    save_config,
    simulate_policy,
    summarize,
)
from .graph import (
    generate_synthetic_event,
    load_event_file,
    normalize_throughput,
    save_synthetic_config,
    split_task,
    write_events,
)
from .meta import meta_train
from .metrics import evaluate
from .nn import initialize, load_checkpoint, save_checkpoint


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON (sections dims/train/meta/env/data/variant)")
    common.add_argument("--seed", type=int, default=0, help="run seed")
    common.add_argument("--variant", choices=sorted(VARIANTS), help="ablation variant")
    common.add_argument("--out", default="runs", help="output root directory")
    for f in dataclasses.fields(TrainConfig):
        if f.type in ("int", int):
            conv = int
        elif f.type in ("bool", bool):
            conv = _parse_bool
        else:
            conv = float
        common.add_argument(
            f"--train.{f.name}",
            dest=f"train_{f.name}",
            type=conv,
            default=None,
            help=f"override train.{f.name}",
        )
    return common


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.variant:
        config = dataclasses.replace(config, variant=args.variant)
    overrides = {
        f.name: getattr(args, f"train_{f.name}")
        for f in dataclasses.fields(TrainConfig)
        if getattr(args, f"train_{f.name}") is not None
    }
    overrides.setdefault("seed", args.seed)
    return dataclasses.replace(config, train=dataclasses.replace(config.train, **overrides))


def _load_task(path: str, split_ratio: float):
    return split_task(normalize_throughput(load_event_file(path)), split_ratio)


def _cmd_generate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    synth = config.data.synthetic
    if synth is None:
        raise SystemExit("generate needs a synthetic section in data config")
    count = args.num_events if args.num_events is not None else config.data.num_events
    events = [
        generate_synthetic_event(synth, config.data.event_seed_base + i, f"event-{i:03d}")
        for i in range(count)
    ]
    out_dir = os.path.join(args.out, "events")
    write_events(events, out_dir)
    save_synthetic_config(synth, os.path.join(args.out, "synthetic.json"))
    print(f"wrote {count} events to {out_dir}")
    return 0


def _cmd_meta_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    variant = VARIANTS[config.variant]
    if not variant.use_meta:
        raise SystemExit(f"variant {config.variant} has no meta-training phase")
    train_tasks, val_tasks, _ = build_tasks(config)
    result = meta_train(
        train_tasks,
        config.meta,
        config.train,
        config.dims,
        validation_tasks=val_tasks,
        use_signature_buffer=variant.use_signature_buffer,
        use_kl_priority=variant.use_kl_priority,
    )
    run_dir = os.path.join(args.out, f"{config.name}-{config.variant}", str(args.seed))
    for sub in ("checkpoints", "logs"):
        os.makedirs(os.path.join(run_dir, sub), exist_ok=True)
    checkpoint = os.path.join(run_dir, "checkpoints", "global.npz")
    save_checkpoint(result.params, args.seed, checkpoint)
    if variant.use_signature_buffer and result.signature_buffer is not None:
        result.signature_buffer.save(os.path.join(run_dir, "checkpoints", "signatures.json"))
    from .experiment import _write_meta_log

    _write_meta_log(result, os.path.join(run_dir, "logs", "meta_train.csv"))
    save_config(config, os.path.join(run_dir, "config.json"))
    print(f"meta-trained {config.variant} -> {checkpoint}")
    return 0


def _cmd_adapt(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    variant = VARIANTS[config.variant]
    params, dims, _ = load_checkpoint(args.checkpoint)
    task = _load_task(args.event, config.data.split_ratio)
    result = adapt_task(
        params,
        task,
        dataclasses.replace(config.train, seed=args.seed),
        use_kl_priority=variant.use_kl_priority,
        rng=np.random.default_rng([args.seed, 777]),
    )
    event_id = task.network.event_id
    os.makedirs(args.out, exist_ok=True)
    adapted_path = os.path.join(args.out, f"adapted-{event_id}.npz")
    save_checkpoint(result.params, args.seed, adapted_path)
    from .experiment import _write_adapt_log, _write_trajectory

    _write_adapt_log(result, os.path.join(args.out, f"adapt-{event_id}.csv"))
    _write_trajectory(result.records, os.path.join(args.out, f"trajectory-{event_id}.csv"))
    print(
        f"adapted on {event_id}: {len(result.metrics)} gradient steps, "
        f"agreement {result.agreements}/{result.agreements + result.mismatches} "
        f"-> {adapted_path}"
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    params, _, _ = load_checkpoint(args.checkpoint)
    task = _load_task(args.event, config.data.split_ratio)
    report = evaluate(params, task, literal_eq1=config.train.literal_eq1)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, f"report-{report.event_id}.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    from .experiment import _write_curve

    _write_curve(report, os.path.join(args.out, f"curve-{report.event_id}.csv"))
    print(
        f"{report.event_id}: rmse={report.rmse:.4f} mae={report.mae:.4f} "
        f"mse={report.mse:.4f} ({report.num_query_interactions} query interactions)"
    )
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    synth = config.data.synthetic
    if synth is None:
        raise SystemExit("simulate needs a synthetic section in data config")
    if args.checkpoint:
        params, _, _ = load_checkpoint(args.checkpoint)
    else:
        params = initialize(config.dims, args.seed)
    os.makedirs(args.out, exist_ok=True)
    sim_seed = args.sim_seed if args.sim_seed is not None else config.env.sim_seed
    report = simulate_policy(
        params,
        synth,
        sim_seed,
        epsilon=args.epsilon,
        episode_seed=args.seed,
        literal_eq1=config.train.literal_eq1,
        trajectory_path=os.path.join(args.out, f"sim-trajectory-{sim_seed}.csv"),
    )
    with open(
        os.path.join(args.out, f"sim-report-{sim_seed}.json"), "w", encoding="utf-8"
    ) as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")
    print(
        f"{report.event_id}: mean_reward={report.mean_reward:.4f} "
        f"first10={report.mean_reward_first_10:.4f} "
        f"intra_office={report.intra_office_rate:.2%} over {report.num_actions} actions"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rows = []
    for entry in sorted(os.listdir(args.out)):
        summary_path = os.path.join(args.out, entry, "summary.json")
        if not os.path.isfile(summary_path):
            continue
        with open(summary_path, encoding="utf-8") as fh:
            summary = json.load(fh)
        rows.append(summary)
    if not rows:
        print(f"no summaries under {args.out}", file=sys.stderr)
        return 1
    print(f"{'run':<32} {'seeds':>5} {'rmse':>18} {'mae':>18} {'mse':>18}")
    for summary in rows:
        cells = []
        for metric in ("rmse", "mae", "mse"):
            stats = summary[metric]
            cells.append(f"{stats['mean']:.4f} +/- {stats['std']:.4f}")
        print(
            f"{summary['variant']:<32} {summary['num_seeds']:>5} "
            f"{cells[0]:>18} {cells[1]:>18} {cells[2]:>18}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="metatracker",
        description="Meta-RL tracker for peer selection in live streaming overlays",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesize event traces")
    p.add_argument("--num-events", type=int, default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("meta-train", parents=[common], help="train global parameters")
    p.set_defaults(func=_cmd_meta_train)

    p = sub.add_parser("adapt", parents=[common], help="adapt a checkpoint to one event")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--event", required=True, help="event trace CSV")
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on one event")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--event", required=True, help="event trace CSV")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common], help="generative-mode rollout")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--sim-seed", type=int, default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="summarize finished runs")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
