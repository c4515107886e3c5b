"""Temporal interaction networks: event traces, task splits, and a synthetic generator.

A live streaming event is a time-ordered sequence of throughput-weighted
viewer-to-viewer interactions. Everything here is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np


class TraceParseError(ValueError):
    """Raised when an event trace file cannot be parsed."""


@dataclass(frozen=True)
class Interaction:
    """One viewer-to-viewer connection measurement.

    ``throughput`` is raw Mbps in an un-normalized network and a unitless
    value in [0, 1] after per-event min-max normalization.
    """

    source: int
    target: int
    time: float
    throughput: float

    def __post_init__(self):
        if self.source < 0 or self.target < 0:
            raise ValueError(f"viewer ids must be >= 0, got ({self.source}, {self.target})")
        if self.source == self.target:
            raise ValueError(f"self-interaction not allowed (viewer {self.source})")
        if self.time < 0:
            raise ValueError(f"interaction time must be >= 0, got {self.time}")
        if not math.isfinite(self.throughput) or self.throughput < 0:
            raise ValueError(f"throughput must be finite and >= 0, got {self.throughput}")

    @property
    def minute(self) -> int:
        return int(self.time // 60.0)


@dataclass(frozen=True)
class TemporalInteractionNetwork:
    """All interactions of one event, sorted by time, with dense viewer ids.

    ``source_ids`` maps dense id -> original id for networks that came from
    a trace file; it is None for synthetic events (identity mapping).
    """

    event_id: str
    num_viewers: int
    interactions: tuple[Interaction, ...]
    normalized: bool = False
    source_ids: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.num_viewers <= 0:
            raise ValueError(f"num_viewers must be > 0, got {self.num_viewers}")
        last_t = 0.0
        for it in self.interactions:
            if it.time < last_t:
                raise ValueError(f"interactions of {self.event_id!r} are not sorted by time")
            last_t = it.time
            if it.source >= self.num_viewers or it.target >= self.num_viewers:
                raise ValueError(
                    f"viewer id out of range in {self.event_id!r}: "
                    f"({it.source}, {it.target}) with num_viewers={self.num_viewers}"
                )
            if self.normalized and it.throughput > 1.0:
                raise ValueError(f"normalized network {self.event_id!r} has throughput > 1")
        if self.source_ids is not None and len(self.source_ids) != self.num_viewers:
            raise ValueError(
                f"source_ids of {self.event_id!r} has {len(self.source_ids)} entries, "
                f"expected {self.num_viewers}"
            )

    def __len__(self) -> int:
        return len(self.interactions)

    @property
    def num_minutes(self) -> int:
        if not self.interactions:
            return 0
        return self.interactions[-1].minute + 1

    def viewers(self) -> range:
        return range(self.num_viewers)


@dataclass(frozen=True)
class Task:
    """One event split into a time-ordered support prefix and query suffix."""

    network: TemporalInteractionNetwork
    support: range
    query: range
    split_ratio: float

    def __post_init__(self):
        n = len(self.network)
        if (self.support.start, self.support.stop) != (0, self.query.start) or self.query.stop != n:
            raise ValueError("support and query must partition the interactions in order")

    @property
    def support_interactions(self) -> tuple[Interaction, ...]:
        return self.network.interactions[self.support.start : self.support.stop]

    @property
    def query_interactions(self) -> tuple[Interaction, ...]:
        return self.network.interactions[self.query.start : self.query.stop]


@dataclass(frozen=True)
class SyntheticEventConfig:
    """Knobs for the office-topology event generator.

    Viewer pairs inside one office share a fast link; pairs across offices
    share a slower one. The CDN link is slower still and only matters as a
    lower bound in the capacity ordering.
    """

    num_offices: int = 4
    viewers_per_office: int = 12
    intra_office_bandwidth: float = 100.0
    inter_office_bandwidth: float = 20.0
    cdn_bandwidth: float = 5.0
    throughput_noise_std: float = 0.1
    duration_minutes: int = 30
    interactions_per_minute: int = 20
    office_assignment_seed: int = 7

    def __post_init__(self):
        if self.num_offices < 1 or self.viewers_per_office < 1:
            raise ValueError("num_offices and viewers_per_office must be >= 1")
        if not (self.intra_office_bandwidth > self.inter_office_bandwidth > self.cdn_bandwidth):
            raise ValueError("capacity ordering must satisfy intra > inter > cdn")
        if self.throughput_noise_std < 0:
            raise ValueError("throughput_noise_std must be >= 0")
        if self.duration_minutes < 1 or self.interactions_per_minute < 1:
            raise ValueError("duration_minutes and interactions_per_minute must be >= 1")

    @property
    def num_viewers(self) -> int:
        return self.num_offices * self.viewers_per_office


def office_assignment(config: SyntheticEventConfig) -> np.ndarray:
    """Office index of every viewer, fixed by office_assignment_seed.

    Independent of the per-event seed so a family of events can share one
    office topology.
    """
    rng = np.random.default_rng(config.office_assignment_seed)
    perm = rng.permutation(config.num_viewers)
    offices = np.empty(config.num_viewers, dtype=np.int64)
    offices[perm] = np.arange(config.num_viewers) // config.viewers_per_office
    return offices


def generate_synthetic_event(
    config: SyntheticEventConfig, seed: int, event_id: str | None = None
) -> TemporalInteractionNetwork:
    """Simulate one event: uniform random viewer pairs, link-class throughput.

    Each simulated minute emits ``interactions_per_minute`` interactions
    between distinct uniformly drawn viewers; the raw throughput is the
    pair's link capacity perturbed by Gaussian noise (std proportional to
    capacity) and clamped at zero. Deterministic for fixed (config, seed).
    """
    rng = np.random.default_rng(seed)
    offices = office_assignment(config)
    n = config.num_viewers
    interactions: list[Interaction] = []
    for minute in range(config.duration_minutes):
        offsets = np.sort(rng.uniform(0.0, 60.0, size=config.interactions_per_minute))
        for k in range(config.interactions_per_minute):
            u, v = rng.choice(n, size=2, replace=False)
            capacity = (
                config.intra_office_bandwidth
                if offices[u] == offices[v]
                else config.inter_office_bandwidth
            )
            noise = rng.normal(0.0, config.throughput_noise_std * capacity)
            throughput = max(0.0, capacity + noise)
            interactions.append(
                Interaction(int(u), int(v), 60.0 * minute + float(offsets[k]), throughput)
            )
    return TemporalInteractionNetwork(
        event_id=event_id or f"synthetic-{seed}",
        num_viewers=n,
        interactions=tuple(interactions),
        normalized=False,
    )


def normalize_throughput(network: TemporalInteractionNetwork) -> TemporalInteractionNetwork:
    """Min-max scale all throughputs of one event into [0, 1].

    The scale is per event: each event has its own bandwidth regime, and
    rewards must be comparable across events. If all throughputs are equal
    the event maps uniformly to 1.0 (everything is "best observed").
    Re-normalizing an already normalized network is rejected because it
    would silently corrupt rewards.
    """
    if network.normalized:
        raise ValueError(f"network {network.event_id!r} is already normalized")
    if not network.interactions:
        raise ValueError(f"network {network.event_id!r} has no interactions")
    values = [it.throughput for it in network.interactions]
    lo, hi = min(values), max(values)
    if hi == lo:
        scaled = [1.0] * len(values)
    else:
        scaled = [(v - lo) / (hi - lo) for v in values]
    return replace(
        network,
        interactions=tuple(
            replace(it, throughput=s) for it, s in zip(network.interactions, scaled)
        ),
        normalized=True,
    )


def split_task(network: TemporalInteractionNetwork, ratio: float) -> Task:
    """Split an event into support (first ceil(ratio*T)) and query (rest).

    The split is by interaction count, not wall-clock time, so bursty
    timestamps cannot starve either side. The support size is capped at
    T - 1 so the query set is never empty.
    """
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    total = len(network)
    if total < 2:
        raise ValueError("cannot split a network with fewer than 2 interactions")
    support_size = math.ceil(ratio * total - 1e-9)
    support_size = min(max(support_size, 1), total - 1)
    return Task(
        network=network,
        support=range(0, support_size),
        query=range(support_size, total),
        split_ratio=ratio,
    )


def neighborhood(
    network: TemporalInteractionNetwork, u: int, t: float
) -> tuple[tuple[int, float], ...]:
    """Neighbors of viewer u observed up to and including time t.

    Edges are treated as undirected; each neighbor is paired with the
    throughput of its most recent interaction with u (later file order wins
    on time ties). Returned sorted by neighbor id so downstream numeric
    reductions are order-stable.
    """
    if u < 0 or u >= network.num_viewers:
        raise ValueError(f"unknown viewer id {u} (num_viewers={network.num_viewers})")
    if t < 0:
        raise ValueError(f"time must be >= 0, got {t}")
    latest: dict[int, float] = {}
    for it in network.interactions:
        if it.time > t:
            break
        if it.source == u:
            latest[it.target] = it.throughput
        elif it.target == u:
            latest[it.source] = it.throughput
    return tuple(sorted(latest.items()))


def _parse_trace_file(path: str) -> list[tuple[int, int, float, float]]:
    rows: list[tuple[int, int, float, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row == ["src", "dst", "time", "throughput"]:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise TraceParseError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                src, dst = int(row[0]), int(row[1])
                time_s, thr = float(row[2]), float(row[3])
            except ValueError as exc:
                raise TraceParseError(f"{path}:{lineno}: {exc}") from None
            if src < 0 or dst < 0:
                raise TraceParseError(f"{path}:{lineno}: viewer ids must be >= 0, got ({src}, {dst})")
            if src == dst:
                raise TraceParseError(f"{path}:{lineno}: self-interaction not allowed (viewer {src})")
            if time_s < 0:
                raise TraceParseError(f"{path}:{lineno}: interaction time must be >= 0, got {time_s}")
            if not math.isfinite(thr) or thr < 0:
                raise TraceParseError(f"{path}:{lineno}: throughput must be finite and >= 0, got {thr}")
            rows.append((src, dst, time_s, thr))
    if not rows:
        raise TraceParseError(f"{path}: empty trace file")
    return rows


def load_event_file(path: str) -> TemporalInteractionNetwork:
    """Load one event trace CSV.

    Viewer ids are densified to 0..N-1 in order of first appearance; the
    original ids are kept on the network (``source_ids``) and written back
    as an ``.idmap.csv`` sidecar by :func:`write_events`. Rows are sorted
    by time (stable, so equal-time rows keep file order).
    """
    rows = _parse_trace_file(path)
    rows.sort(key=lambda r: r[2])
    dense: dict[int, int] = {}
    for src, dst, _, _ in rows:
        for vid in (src, dst):
            if vid not in dense:
                dense[vid] = len(dense)
    interactions = tuple(
        Interaction(dense[src], dense[dst], time_s, thr) for src, dst, time_s, thr in rows
    )
    originals = tuple(sorted(dense, key=dense.get))
    return TemporalInteractionNetwork(
        event_id=os.path.splitext(os.path.basename(path))[0],
        num_viewers=len(dense),
        interactions=interactions,
        normalized=False,
        source_ids=originals,
    )


def load_events(path: str) -> list[TemporalInteractionNetwork]:
    """Load every ``*.csv`` event trace in a directory (idmap sidecars skipped)."""
    if not os.path.isdir(path):
        raise FileNotFoundError(f"event directory not found: {path}")
    names = sorted(
        n for n in os.listdir(path) if n.endswith(".csv") and not n.endswith(".idmap.csv")
    )
    if not names:
        raise TraceParseError(f"no event trace files in {path}")
    return [load_event_file(os.path.join(path, name)) for name in names]


def write_events(networks: Iterable[TemporalInteractionNetwork], path: str) -> None:
    """Write event traces plus their id-mapping sidecars.

    Inverse of :func:`load_events` up to id densification and time sorting.
    """
    os.makedirs(path, exist_ok=True)
    for net in networks:
        with open(os.path.join(path, f"{net.event_id}.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["src", "dst", "time", "throughput"])
            for it in net.interactions:
                writer.writerow([it.source, it.target, repr(it.time), repr(it.throughput)])
        originals = net.source_ids or tuple(range(net.num_viewers))
        with open(
            os.path.join(path, f"{net.event_id}.idmap.csv"), "w", newline="", encoding="utf-8"
        ) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["original_id", "dense_id"])
            for dense_id, original in enumerate(originals):
                writer.writerow([original, dense_id])


def load_synthetic_config(path: str) -> SyntheticEventConfig:
    """Read a SyntheticEventConfig from a flat JSON file (exact field names)."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a JSON object")
    valid = {f.name for f in SyntheticEventConfig.__dataclass_fields__.values()}
    unknown = set(raw) - valid
    if unknown:
        raise ValueError(f"{path}: unknown synthetic config key(s): {sorted(unknown)}")
    return SyntheticEventConfig(**raw)


def save_synthetic_config(config: SyntheticEventConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {name: getattr(config, name) for name in SyntheticEventConfig.__dataclass_fields__},
            fh,
            indent=2,
        )
        fh.write("\n")
