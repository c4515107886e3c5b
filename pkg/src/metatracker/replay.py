"""KL-prioritized experience replay.

A transition's priority is the KL divergence between its viewer's
throughput histograms in consecutive active minutes, frozen at push time.
Histograms are Laplace-smoothed so the divergence is always finite.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .instrumentation import counters


@dataclass(frozen=True)
class Transition:
    """One stored (state, action, reward) record.

    ``action`` is the full actor distribution; ``chosen`` is the selected
    index, kept separately for the log-probability term of the actor loss.
    ``time`` is the event-relative minute. ``next_state`` is only populated
    when the episode driver is asked to collect it (bootstrap critic mode).
    """

    viewer: int
    state: torch.Tensor
    action: torch.Tensor
    mask: torch.Tensor
    chosen: int
    reward: float
    time: int
    priority: float = 0.0
    next_state: torch.Tensor | None = None

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError(f"reward must be in [0,1], got {self.reward}")
        if not (math.isfinite(self.priority) and self.priority >= 0):
            raise ValueError(f"priority must be finite and >= 0, got {self.priority}")
        if self.time < 0:
            raise ValueError(f"minute index must be >= 0, got {self.time}")


@dataclass
class ThroughputHistogram:
    """Counts over an equal-width partition of [0, 1].

    The top bin is right-closed so a reward of exactly 1.0 lands in it.
    Smoothed probabilities (count + alpha) / (total + alpha * bins) are
    strictly positive, which keeps every KL divergence finite.
    """

    bin_count: int = 10
    laplace_alpha: float = 1.0
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.bin_count < 2:
            raise ValueError(f"bin_count must be >= 2, got {self.bin_count}")
        if self.laplace_alpha <= 0:
            raise ValueError(f"laplace_alpha must be > 0, got {self.laplace_alpha}")
        if self.counts is None:
            self.counts = np.zeros(self.bin_count, dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.bin_count,) or (self.counts < 0).any():
                raise ValueError("counts must be bin_count non-negative integers")

    def add(self, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"histogram value must be in [0,1], got {value}")
        index = min(int(value * self.bin_count), self.bin_count - 1)
        self.counts[index] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def probabilities(self) -> np.ndarray:
        denom = self.total + self.laplace_alpha * self.bin_count
        return (self.counts + self.laplace_alpha) / denom

    def copy(self) -> "ThroughputHistogram":
        return ThroughputHistogram(self.bin_count, self.laplace_alpha, self.counts.copy())


def kl_divergence(p: ThroughputHistogram, q: ThroughputHistogram) -> float:
    """D_KL(p || q) of the smoothed bin distributions, natural log."""
    if p.bin_count != q.bin_count or p.laplace_alpha != q.laplace_alpha:
        raise ValueError(
            "histograms must share binning: "
            f"({p.bin_count}, {p.laplace_alpha}) vs ({q.bin_count}, {q.laplace_alpha})"
        )
    n, a = p.bin_count, p.laplace_alpha
    denom_p = p.total + a * n
    denom_q = q.total + a * n
    out = 0.0
    for cp, cq in zip(p.counts, q.counts):
        pp = (cp + a) / denom_p
        qq = (cq + a) / denom_q
        out += pp * math.log(pp / qq)
    return out


class _ViewerHistograms:
    """Current-minute and previous-active-minute histograms of one viewer."""

    __slots__ = ("current", "previous", "minute")

    def __init__(self, bin_count: int, laplace_alpha: float, minute: int):
        self.current = ThroughputHistogram(bin_count, laplace_alpha)
        self.previous = ThroughputHistogram(bin_count, laplace_alpha)
        self.minute = minute


class ReplayBuffer:
    """Ring of the D latest transitions with per-viewer throughput histograms.

    Push order doubles as recency: ties in priority are broken toward the
    newer transition when sampling.
    """

    def __init__(self, capacity: int, bin_count: int = 10, laplace_alpha: float = 1.0):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.bin_count = bin_count
        self.laplace_alpha = laplace_alpha
        self._ring: deque[tuple[int, Transition]] = deque(maxlen=capacity)
        self._histograms: dict[int, _ViewerHistograms] = {}
        self._counter = 0

    def __len__(self) -> int:
        return len(self._ring)

    @property
    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [t for _, t in self._ring]

    def record_reward(self, viewer: int, reward: float, minute: int) -> None:
        """Add a reward to the viewer's current-minute histogram.

        On rollover to a later minute the current histogram becomes the
        previous one and a fresh current starts (also across inactive-minute
        gaps: "previous" always means the viewer's last active minute).
        """
        if not 0.0 <= reward <= 1.0:
            raise ValueError(f"reward must be in [0,1], got {reward}")
        hist = self._histograms.get(viewer)
        if hist is None:
            hist = _ViewerHistograms(self.bin_count, self.laplace_alpha, minute)
            self._histograms[viewer] = hist
        elif minute < hist.minute:
            raise ValueError(
                f"minute moved backwards for viewer {viewer}: {hist.minute} -> {minute}"
            )
        elif minute > hist.minute:
            hist.previous = hist.current
            hist.current = ThroughputHistogram(self.bin_count, self.laplace_alpha)
            hist.minute = minute
        hist.current.add(reward)

    def priority_of(self, viewer: int) -> float:
        """KL(current || previous) of the viewer's histograms right now."""
        hist = self._histograms.get(viewer)
        if hist is None:
            raise KeyError(f"no rewards recorded for viewer {viewer}")
        return kl_divergence(hist.current, hist.previous)

    def histograms_of(self, viewer: int) -> tuple[ThroughputHistogram, ThroughputHistogram]:
        hist = self._histograms.get(viewer)
        if hist is None:
            raise KeyError(f"no rewards recorded for viewer {viewer}")
        return hist.current.copy(), hist.previous.copy()

    def push(self, transition: Transition) -> Transition:
        """Store the transition with its priority frozen at this moment.

        Returns the stored record (priority filled in). The oldest record is
        evicted when the buffer is at capacity, regardless of priority.
        """
        stored = replace(transition, priority=self.priority_of(transition.viewer))
        self._ring.append((self._counter, stored))
        self._counter += 1
        return stored

    def sample_top_k(self, k: int) -> list[Transition]:
        """The min(k, size) highest-priority transitions, newer first on ties."""
        self._check_sample(k)
        counters.increment("kl_priority_samples")
        ranked = sorted(self._ring, key=lambda item: (-item[1].priority, -item[0]))
        return [t for _, t in ranked[: min(k, len(ranked))]]

    def sample_uniform(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """min(k, size) transitions drawn uniformly without replacement."""
        self._check_sample(k)
        counters.increment("uniform_samples")
        take = min(k, len(self._ring))
        indices = rng.choice(len(self._ring), size=take, replace=False)
        items = list(self._ring)
        return [items[i][1] for i in indices]

    def _check_sample(self, k: int) -> None:
        if k < 1:
            raise ValueError(f"sample size must be >= 1, got {k}")
        if not self._ring:
            raise ValueError("cannot sample from an empty replay buffer")
