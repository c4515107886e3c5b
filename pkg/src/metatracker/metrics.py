"""Evaluation metrics and the query-set evaluation pass."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .env import StreamingEnvironment, run_episode
from .graph import Task
from .nn import ParameterSet


def _check_pairs(pairs) -> list[tuple[float, float]]:
    pairs = list(pairs)
    if not pairs:
        raise ValueError("metric of an empty residual set is undefined")
    return pairs


def mse(pairs) -> float:
    """Mean squared residual (1/n) sum (q - r)^2."""
    pairs = _check_pairs(pairs)
    return sum((q - r) ** 2 for q, r in pairs) / len(pairs)


def rmse(pairs) -> float:
    """Root of the mean squared residual; sqrt(mse) of the same pairs."""
    return math.sqrt(mse(pairs))


def mae(pairs) -> float:
    """Mean absolute residual (1/n) sum |q - r|."""
    pairs = _check_pairs(pairs)
    return sum(abs(q - r) for q, r in pairs) / len(pairs)


def average_reward_curve(minute_reward_sums, n: int) -> tuple[tuple[int, float], ...]:
    """Per-minute average reward r^t = (sum of rewards at minute t) / n.

    Minutes with no interactions simply don't appear in the input, so they
    are omitted from the curve.
    """
    if n <= 0:
        raise ValueError(f"viewer count must be > 0, got {n}")
    return tuple((minute, total / n) for minute, total in minute_reward_sums)


@dataclass(frozen=True)
class EvalReport:
    """Query-set prediction quality of one event.

    ``mae`` is the true mean absolute error. ``mse`` is the mean *squared*
    residual, reported alongside because a squared-numerator variant of the
    same aggregate is in common use under the MAE name; ``rmse`` is its
    square root, bit-for-bit.
    """

    event_id: str
    rmse: float
    mae: float
    mse: float
    reward_curve: tuple[tuple[int, float], ...]
    num_query_interactions: int

    def __post_init__(self):
        for name in ("rmse", "mae", "mse"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "rmse": self.rmse,
            "mae": self.mae,
            "mse": self.mse,
            "reward_curve": [[m, r] for m, r in self.reward_curve],
            "num_query_interactions": self.num_query_interactions,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        return cls(
            event_id=raw["event_id"],
            rmse=raw["rmse"],
            mae=raw["mae"],
            mse=raw["mse"],
            reward_curve=tuple((int(m), float(r)) for m, r in raw["reward_curve"]),
            num_query_interactions=raw["num_query_interactions"],
        )


def evaluate(params: ParameterSet, task: Task, *, literal_eq1: bool = False) -> EvalReport:
    """Greedy, update-free replay of the query set.

    The support set is preloaded into the neighborhoods (the tracker has
    already watched it), then each query interaction contributes the pair
    (critic value at the encoded state/action, realized reward).
    """
    if not task.query_interactions:
        raise ValueError("cannot evaluate an empty query set")
    env = StreamingEnvironment(
        mode="replay",
        network=task.network,
        replay_range=task.query,
        preload=task.support,
    )
    episode = run_episode(env, params, 0.0, 0, literal_eq1=literal_eq1)
    pairs = [(rec.q_value, rec.reward) for rec in episode.records]
    mse_value = mse(pairs)
    return EvalReport(
        event_id=task.network.event_id,
        rmse=math.sqrt(mse_value),
        mae=mae(pairs),
        mse=mse_value,
        reward_curve=average_reward_curve(
            episode.minute_reward_sums, task.network.num_viewers
        ),
        num_query_interactions=len(pairs),
    )
