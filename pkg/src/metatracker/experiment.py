"""Experiment orchestration: configs, variants, runs, and summaries.

A run directory is laid out as
``<out>/<name>-<variant>/<seed>/{checkpoints,reports,curves,logs}`` with a
cross-seed ``summary.json``/``summary.csv`` one level up. Every number in
the summary is recomputable from the persisted per-event reports.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .agent import AdaptResult, TrainConfig, adapt_task
from .env import StreamingEnvironment, run_episode
from .graph import (
    SyntheticEventConfig,
    Task,
    TemporalInteractionNetwork,
    generate_synthetic_event,
    load_events,
    normalize_throughput,
    office_assignment,
    split_task,
)
from .meta import MetaConfig, MetaResult, meta_train
from .metrics import EvalReport, evaluate
from .nn import NetworkDims, ParameterSet, initialize, save_checkpoint

VARIANT_NAMES = ("MELANIE", "MELANIE-M", "MELANIE-B", "MELANIE-T")


@dataclass(frozen=True)
class VariantSpec:
    """Ablation switches. use_signature_buffer only matters when use_meta."""

    name: str
    use_meta: bool
    use_signature_buffer: bool
    use_kl_priority: bool


VARIANTS = {
    "MELANIE": VariantSpec("MELANIE", True, True, True),
    "MELANIE-M": VariantSpec("MELANIE-M", True, False, True),
    "MELANIE-B": VariantSpec("MELANIE-B", False, False, True),
    "MELANIE-T": VariantSpec("MELANIE-T", False, False, False),
}


@dataclass(frozen=True)
class DataConfig:
    """Event source and split sizes.

    Exactly one of events_dir / synthetic supplies the events. The first
    train_events events train the meta-learner, the next val_events drive
    early stopping, the next test_events are held out for evaluation.
    """

    events_dir: str | None = None
    synthetic: SyntheticEventConfig | None = None
    num_events: int = 30
    event_seed_base: int = 100
    train_events: int = 26
    val_events: int = 2
    test_events: int = 2
    split_ratio: float = 0.8

    def __post_init__(self):
        if (self.events_dir is None) == (self.synthetic is None):
            raise ValueError("data config needs exactly one of events_dir or synthetic")
        if self.train_events < 1 or self.test_events < 1 or self.val_events < 0:
            raise ValueError("need train_events >= 1, test_events >= 1, val_events >= 0")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError(f"split_ratio must be in (0,1), got {self.split_ratio}")

    @property
    def total_events(self) -> int:
        return self.train_events + self.val_events + self.test_events


@dataclass(frozen=True)
class EnvConfig:
    """Environment-facing knobs of a run."""

    mode: str = "replay"
    sim_seed: int = 9999

    def __post_init__(self):
        if self.mode not in ("replay", "generative"):
            raise ValueError(f"env.mode must be 'replay' or 'generative', got {self.mode!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    dims: NetworkDims = NetworkDims(d=16, d_s=32, max_viewers=64, hidden=32)
    train: TrainConfig = TrainConfig()
    meta: MetaConfig = MetaConfig()
    env: EnvConfig = EnvConfig()
    data: DataConfig = DataConfig(synthetic=SyntheticEventConfig())
    variant: str = "MELANIE"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"config key 'variant' names unknown variant {self.variant!r}; "
                f"expected one of {VARIANT_NAMES}"
            )


def _build_section(cls, raw: dict, section: str):
    valid = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in valid:
            raise ValueError(f"unknown config key '{section}.{key}'")
    return cls(**raw)


def load_config(path: str) -> ExperimentConfig:
    """Read a run config (JSON, sections dims/train/meta/env/data/variant).

    Unknown keys are rejected by name at every level rather than ignored.
    """
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    allowed = {"name", "dims", "train", "meta", "env", "data", "variant"}
    for key in raw:
        if key not in allowed:
            raise ValueError(f"unknown config key '{key}'")
    kwargs = {}
    if "name" in raw:
        kwargs["name"] = raw["name"]
    if "variant" in raw:
        kwargs["variant"] = raw["variant"]
    if "dims" in raw:
        kwargs["dims"] = _build_section(NetworkDims, raw["dims"], "dims")
    if "train" in raw:
        kwargs["train"] = _build_section(TrainConfig, raw["train"], "train")
    if "meta" in raw:
        kwargs["meta"] = _build_section(MetaConfig, raw["meta"], "meta")
    if "env" in raw:
        kwargs["env"] = _build_section(EnvConfig, raw["env"], "env")
    if "data" in raw:
        data_raw = dict(raw["data"])
        if "synthetic" in data_raw and data_raw["synthetic"] is not None:
            data_raw["synthetic"] = _build_section(
                SyntheticEventConfig, data_raw["synthetic"], "data.synthetic"
            )
        kwargs["data"] = _build_section(DataConfig, data_raw, "data")
    return ExperimentConfig(**kwargs)


def save_config(config: ExperimentConfig, path: str) -> None:
    payload = {
        "name": config.name,
        "variant": config.variant,
        "dims": dataclasses.asdict(config.dims),
        "train": dataclasses.asdict(config.train),
        "meta": dataclasses.asdict(config.meta),
        "env": dataclasses.asdict(config.env),
        "data": dataclasses.asdict(config.data),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def build_events(data: DataConfig) -> list[TemporalInteractionNetwork]:
    """Load or synthesize the run's events, normalized, in split order."""
    if data.events_dir is not None:
        events = [normalize_throughput(net) for net in load_events(data.events_dir)]
    else:
        assert data.synthetic is not None
        events = [
            normalize_throughput(
                generate_synthetic_event(
                    data.synthetic, data.event_seed_base + i, f"event-{i:03d}"
                )
            )
            for i in range(data.num_events)
        ]
    if len(events) < data.total_events:
        raise ValueError(
            f"need {data.total_events} events for the configured split, "
            f"got {len(events)}"
        )
    return events


def build_tasks(config: ExperimentConfig) -> tuple[list[Task], list[Task], list[Task]]:
    """(train, validation, test) tasks per the configured split."""
    events = build_events(config.data)
    for event in events:
        if event.num_viewers > config.dims.max_viewers:
            raise ValueError(
                f"event {event.event_id!r} has {event.num_viewers} viewers but "
                f"dims.max_viewers={config.dims.max_viewers}"
            )
    tasks = [split_task(e, config.data.split_ratio) for e in events]
    n_train, n_val, n_test = (
        config.data.train_events,
        config.data.val_events,
        config.data.test_events,
    )
    train = tasks[:n_train]
    val = tasks[n_train : n_train + n_val]
    test = tasks[n_train + n_val : n_train + n_val + n_test]
    return train, val, test


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_adapt_log(result: AdaptResult, path: str) -> None:
    _write_csv(
        path,
        ["step", "actor_loss", "critic_loss", "mean_priority", "epsilon"],
        [
            [row.step, repr(row.actor_loss), repr(row.critic_loss),
             repr(row.mean_priority), repr(row.epsilon)]
            for row in result.metrics
        ],
    )


def _write_meta_log(result: MetaResult, path: str) -> None:
    _write_csv(
        path,
        [
            "epoch", "task_id", "inner_actor_loss", "inner_critic_loss",
            "meta_actor_loss", "meta_critic_loss", "mean_signature_divergence",
        ],
        [
            [row.epoch, row.task_id, repr(row.inner_actor_loss),
             repr(row.inner_critic_loss), repr(row.meta_actor_loss),
             repr(row.meta_critic_loss), repr(row.mean_signature_divergence)]
            for row in result.history
        ],
    )


def _write_trajectory(records, path: str) -> None:
    _write_csv(
        path,
        ["minute", "viewer", "chosen", "reward", "priority"],
        [[r.minute, r.viewer, r.chosen, repr(r.reward), repr(r.priority)] for r in records],
    )


def _write_curve(report: EvalReport, path: str) -> None:
    _write_csv(
        path,
        ["minute", "average_reward"],
        [[m, repr(r)] for m, r in report.reward_curve],
    )


@dataclass
class SeedRunResult:
    seed: int
    reports: list[EvalReport]
    out_dir: str


def run_seed(
    config: ExperimentConfig,
    seed: int,
    out_dir: str,
    *,
    tasks: tuple[list[Task], list[Task], list[Task]] | None = None,
) -> SeedRunResult:
    """One full (meta-)train -> adapt -> evaluate pass for one seed."""
    variant = VARIANTS[config.variant]
    train_tasks, val_tasks, test_tasks = tasks if tasks is not None else build_tasks(config)
    train_config = dataclasses.replace(config.train, seed=seed)
    for sub in ("checkpoints", "reports", "curves", "logs"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    if variant.use_meta:
        meta_result = meta_train(
            train_tasks,
            config.meta,
            train_config,
            config.dims,
            validation_tasks=val_tasks,
            use_signature_buffer=variant.use_signature_buffer,
            use_kl_priority=variant.use_kl_priority,
        )
        global_params = meta_result.params
        _write_meta_log(meta_result, os.path.join(out_dir, "logs", "meta_train.csv"))
        if variant.use_signature_buffer and meta_result.signature_buffer is not None:
            meta_result.signature_buffer.save(
                os.path.join(out_dir, "checkpoints", "signatures.json")
            )
    else:
        global_params = initialize(config.dims, seed)
    save_checkpoint(global_params, seed, os.path.join(out_dir, "checkpoints", "global.npz"))

    reports = []
    for i, task in enumerate(test_tasks):
        event_id = task.network.event_id
        rng = np.random.default_rng([seed, 777, i])
        adapt_result = adapt_task(
            global_params,
            task,
            train_config,
            use_kl_priority=variant.use_kl_priority,
            rng=rng,
        )
        _write_adapt_log(
            adapt_result, os.path.join(out_dir, "logs", f"adapt-{event_id}.csv")
        )
        _write_trajectory(
            adapt_result.records,
            os.path.join(out_dir, "logs", f"trajectory-{event_id}.csv"),
        )
        save_checkpoint(
            adapt_result.params,
            seed,
            os.path.join(out_dir, "checkpoints", f"adapted-{event_id}.npz"),
        )
        report = evaluate(adapt_result.params, task, literal_eq1=train_config.literal_eq1)
        reports.append(report)
        with open(
            os.path.join(out_dir, "reports", f"{event_id}.json"), "w", encoding="utf-8"
        ) as fh:
            json.dump(report.as_dict(), fh, indent=2)
            fh.write("\n")
        _write_curve(report, os.path.join(out_dir, "curves", f"{event_id}.csv"))
    _write_csv(
        os.path.join(out_dir, "reports", "reports.csv"),
        ["event_id", "rmse", "mae", "mse", "num_query_interactions"],
        [
            [r.event_id, repr(r.rmse), repr(r.mae), repr(r.mse), r.num_query_interactions]
            for r in reports
        ],
    )
    return SeedRunResult(seed=seed, reports=reports, out_dir=out_dir)


def summarize(variant: str, seed_results: list[SeedRunResult]) -> dict:
    """Cross-seed aggregates; the mean is over all per-event report values."""
    per_seed = {
        res.seed: {
            "rmse": [r.rmse for r in res.reports],
            "mae": [r.mae for r in res.reports],
            "mse": [r.mse for r in res.reports],
        }
        for res in seed_results
    }
    summary: dict = {
        "variant": variant,
        "num_seeds": len(seed_results),
        "seeds": [res.seed for res in seed_results],
        "per_seed": per_seed,
    }
    for metric in ("rmse", "mae", "mse"):
        all_values = [v for res in seed_results for v in per_seed[res.seed][metric]]
        seed_means = [float(np.mean(per_seed[res.seed][metric])) for res in seed_results]
        summary[metric] = {
            "mean": float(np.mean(all_values)),
            "std": float(np.std(seed_means)),
            "median_over_seeds": float(np.median(seed_means)),
            "per_seed_mean": seed_means,
        }
    return summary


def run_experiment(
    config: ExperimentConfig, seeds: list[int], out_root: str
) -> dict:
    """Run every seed of one variant and write the cross-seed summary."""
    run_name = f"{config.name}-{config.variant}"
    run_dir = os.path.join(out_root, run_name)
    os.makedirs(run_dir, exist_ok=True)
    save_config(config, os.path.join(run_dir, "config.json"))
    tasks = build_tasks(config)
    results = [
        run_seed(config, seed, os.path.join(run_dir, str(seed)), tasks=tasks)
        for seed in seeds
    ]
    summary = summarize(config.variant, results)
    with open(os.path.join(run_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _write_csv(
        os.path.join(run_dir, "summary.csv"),
        ["variant", "metric", "mean", "std", "median_over_seeds"],
        [
            [config.variant, metric, repr(summary[metric]["mean"]),
             repr(summary[metric]["std"]), repr(summary[metric]["median_over_seeds"])]
            for metric in ("rmse", "mae", "mse")
        ],
    )
    return summary


@dataclass(frozen=True)
class SimulationReport:
    """Outcome of a generative-mode rollout."""

    event_id: str
    mean_reward: float
    mean_reward_first_10: float
    intra_office_rate: float
    reward_curve: tuple[tuple[int, float], ...]
    num_actions: int

    def as_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "mean_reward": self.mean_reward,
            "mean_reward_first_10": self.mean_reward_first_10,
            "intra_office_rate": self.intra_office_rate,
            "reward_curve": [[m, r] for m, r in self.reward_curve],
            "num_actions": self.num_actions,
        }


def simulate_policy(
    params: ParameterSet,
    synthetic_config: SyntheticEventConfig,
    sim_seed: int,
    *,
    epsilon: float = 0.0,
    episode_seed: int = 0,
    literal_eq1: bool = False,
    trajectory_path: str | None = None,
) -> SimulationReport:
    """Roll a policy through a generative event and score it.

    epsilon=0 is the greedy policy under evaluation; epsilon=1 is the
    uniform-random reference. The intra-office rate counts picks that land
    in the acting viewer's own office (the link-model optimum).
    """
    env = StreamingEnvironment(
        mode="generative", synthetic_config=synthetic_config, seed=sim_seed
    )
    episode = run_episode(
        env, params, epsilon, episode_seed, literal_eq1=literal_eq1
    )
    offices = office_assignment(synthetic_config)
    records = episode.records
    if trajectory_path is not None:
        _write_trajectory(records, trajectory_path)
    rewards = [r.reward for r in records]
    first_10 = [r.reward for r in records if r.minute < 10]
    intra = [1.0 if offices[r.viewer] == offices[r.chosen] else 0.0 for r in records]
    n = synthetic_config.num_viewers
    return SimulationReport(
        event_id=env.event_id,
        mean_reward=float(np.mean(rewards)) if rewards else 0.0,
        mean_reward_first_10=float(np.mean(first_10)) if first_10 else 0.0,
        intra_office_rate=float(np.mean(intra)) if intra else 0.0,
        reward_curve=tuple((m, s / n) for m, s in episode.minute_reward_sums),
        num_actions=len(records),
    )
