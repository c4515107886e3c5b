"""Live-video-streaming MDP: replayed or simulated events, throughput rewards.

Replay mode steps through a recorded trace; the reward is always the trace's
measured throughput (a recorded event cannot reveal the throughput of a
connection it never measured), and the agent's proposal is logged and scored
for agreement. Generative mode simulates an office topology, so actions are
fully counterfactual: the chosen link's class determines the reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .graph import (
    Interaction,
    SyntheticEventConfig,
    TemporalInteractionNetwork,
    generate_synthetic_event,
    office_assignment,
)
from .nn import (
    GraphSignature,
    ParameterSet,
    actor_forward,
    compute_signature,
    critic_forward,
    encode_state,
)
from .replay import ReplayBuffer, Transition

REPLAY = "replay"
GENERATIVE = "generative"


@dataclass(frozen=True)
class StepRecord:
    """Everything observed at one acting opportunity.

    ``chosen`` is the transition's training partner (the trace partner in
    replay mode, the agent's pick in generative mode); ``proposed`` is what
    the agent picked either way. ``q_value`` is the critic's value at
    acting time, kept as a plain float so later losses can use it as a
    constant advantage reference.
    """

    viewer: int
    minute: int
    neighbors: tuple[tuple[int, float], ...]
    mask: torch.Tensor
    state: torch.Tensor
    action: torch.Tensor
    chosen: int
    proposed: int
    reward: float
    q_value: float
    priority: float = 0.0
    next_state: torch.Tensor | None = None

    @property
    def agreed(self) -> bool:
        return self.chosen == self.proposed


@dataclass(frozen=True)
class EpisodeResult:
    records: tuple[StepRecord, ...]
    minute_reward_sums: tuple[tuple[int, float], ...]
    agreements: int
    mismatches: int

    @property
    def total_reward(self) -> float:
        return sum(r.reward for r in self.records)


class StreamingEnvironment:
    """One event exposed as an MDP.

    Replay mode serves a (sub-range of a) normalized trace; generative mode
    simulates a synthetic office topology minute by minute with a background
    trace so viewers accumulate neighbors even before the agent acts.
    """

    def __init__(
        self,
        *,
        mode: str,
        network: TemporalInteractionNetwork | None = None,
        synthetic_config: SyntheticEventConfig | None = None,
        seed: int = 0,
        replay_range: range | None = None,
        preload: range | None = None,
    ):
        if mode not in (REPLAY, GENERATIVE):
            raise ValueError(f"unknown environment mode {mode!r}")
        self.mode = mode
        if mode == REPLAY:
            if network is None:
                raise ValueError("replay mode requires a network")
            if not network.normalized:
                raise ValueError(
                    f"replay of {network.event_id!r} requires normalized throughputs"
                )
            self.network = network
            self._range = replay_range if replay_range is not None else range(len(network))
            if self._range.stop > len(network) or self._range.start < 0:
                raise ValueError("replay range exceeds the trace")
            self._preload = preload
            self.num_viewers = network.num_viewers
            self.event_id = network.event_id
        else:
            if synthetic_config is None:
                raise ValueError("generative mode requires a synthetic config")
            self.config = synthetic_config
            self.seed = seed
            self.offices = office_assignment(synthetic_config)
            self.num_viewers = synthetic_config.num_viewers
            self.event_id = f"sim-{seed}"
            background = generate_synthetic_event(synthetic_config, seed, self.event_id)
            scale = synthetic_config.intra_office_bandwidth
            self._background: dict[int, list[Interaction]] = {}
            for it in background.interactions:
                self._background.setdefault(it.minute, []).append(
                    Interaction(it.source, it.target, it.time, min(it.throughput / scale, 1.0))
                )
        self.reset()

    def reset(self) -> None:
        """Back to the pre-episode state: empty neighborhoods, first minute."""
        self._latest: dict[int, dict[int, float]] = {}
        self._done = False
        self.agreements = 0
        self.mismatches = 0
        if self.mode == REPLAY:
            self._pos = self._range.start
            self._minute = 0
            if len(self._range) == 0:
                self._done = True
            if self._preload is not None:
                for i in self._preload:
                    it = self.network.interactions[i]
                    self._observe(it.source, it.target, it.throughput)
        else:
            self._minute = -1
            self._noise_rng = np.random.default_rng([self.seed, 1])

    @property
    def done(self) -> bool:
        return self._done

    @property
    def current_minute(self) -> int:
        return self._minute

    def roster(self) -> range:
        return range(self.num_viewers)

    def _observe(self, u: int, v: int, throughput: float) -> None:
        self._latest.setdefault(u, {})[v] = throughput
        self._latest.setdefault(v, {})[u] = throughput

    def neighborhood(self, u: int) -> tuple[tuple[int, float], ...]:
        """Neighbors of u observed so far this episode, sorted by id."""
        if not 0 <= u < self.num_viewers:
            raise ValueError(f"unknown viewer id {u} (num_viewers={self.num_viewers})")
        return tuple(sorted(self._latest.get(u, {}).items()))

    def action_mask(self, u: int, capacity: int) -> torch.Tensor:
        """Selectable action slots: real viewers of this event, minus u."""
        if capacity < self.num_viewers:
            raise ValueError(
                f"action capacity {capacity} is smaller than num_viewers {self.num_viewers}"
            )
        mask = torch.zeros(capacity, dtype=torch.bool)
        mask[: self.num_viewers] = True
        mask[u] = False
        return mask

    def peek(self) -> Interaction | None:
        """Replay mode: the trace interaction the next step will consume."""
        if self.mode != REPLAY:
            raise ValueError("peek is only meaningful in replay mode")
        if self._done:
            return None
        return self.network.interactions[self._pos]

    def advance_minute(self) -> int | None:
        """Generative mode: move to the next minute, injecting its background
        interactions. Returns the new minute index, or None once the
        configured duration is exhausted (which also sets done)."""
        if self.mode != GENERATIVE:
            raise ValueError("advance_minute is only meaningful in generative mode")
        if self._minute + 1 >= self.config.duration_minutes:
            self._done = True
            return None
        self._minute += 1
        for it in self._background.get(self._minute, []):
            self._observe(it.source, it.target, it.throughput)
        return self._minute

    def acting_viewers(self) -> list[int]:
        """Viewers with at least one observed interaction, ascending id."""
        return sorted(u for u, nbrs in self._latest.items() if nbrs)

    def step(self, u: int, chosen: int) -> tuple[float, bool]:
        """Connect u to chosen; return (normalized reward, done)."""
        if self._done:
            raise RuntimeError("step called on a finished environment")
        if u == chosen:
            raise ValueError(f"self-connection rejected for viewer {u}")
        for vid in (u, chosen):
            if not 0 <= vid < self.num_viewers:
                raise ValueError(f"unknown viewer id {vid} (num_viewers={self.num_viewers})")
        if self.mode == REPLAY:
            it = self.network.interactions[self._pos]
            reward = it.throughput
            if u == it.source and chosen == it.target:
                self.agreements += 1
            else:
                self.mismatches += 1
            self._observe(it.source, it.target, it.throughput)
            self._minute = it.minute
            self._pos += 1
            if self._pos >= self._range.stop:
                self._done = True
            return reward, self._done
        if self._minute < 0:
            raise RuntimeError("generative step before the first advance_minute")
        cfg = self.config
        capacity = (
            cfg.intra_office_bandwidth
            if self.offices[u] == self.offices[chosen]
            else cfg.inter_office_bandwidth
        )
        noise = self._noise_rng.normal(0.0, cfg.throughput_noise_std * capacity)
        raw = max(0.0, capacity + noise)
        reward = min(raw / cfg.intra_office_bandwidth, 1.0)
        self._observe(u, chosen, reward)
        return reward, self._done


def select_action(
    dist: torch.Tensor, epsilon: float, mask: torch.Tensor, rng: np.random.Generator
) -> int:
    """Epsilon-greedy pick: argmax of the distribution (first index on ties)
    with probability 1 - epsilon, otherwise uniform over the mask."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0,1], got {epsilon}")
    mask_np = mask.detach().numpy()
    if not mask_np.any():
        raise ValueError("action mask has no selectable viewer")
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(mask_np)))
    return int(np.argmax(dist.detach().numpy()))


def act_once(
    env: StreamingEnvironment,
    u: int,
    minute: int,
    params: ParameterSet,
    H: GraphSignature,
    epsilon: float,
    rng: np.random.Generator,
    buffer: ReplayBuffer | None = None,
    *,
    literal_eq1: bool = False,
    collect_next_state: bool = False,
) -> StepRecord:
    """One acting opportunity: encode, act, step, and (optionally) store.

    In replay mode the stored/training partner is the trace's actual
    partner; the agent's proposal only feeds the agreement counters.
    """
    trace_it = env.peek() if env.mode == REPLAY else None
    neighbors = env.neighborhood(u)
    mask = env.action_mask(u, params.dims.max_viewers)
    with torch.no_grad():
        state = encode_state(params, H, u, neighbors, literal_eq1=literal_eq1)
        dist = actor_forward(params, state, mask)
        q_value = float(critic_forward(params, state, dist))
    proposed = select_action(dist, epsilon, mask, rng)
    if env.mode == REPLAY:
        assert trace_it is not None
        chosen = trace_it.target
        reward, _ = env.step(u, proposed)
    else:
        chosen = proposed
        reward, _ = env.step(u, chosen)
    next_state = None
    if collect_next_state:
        with torch.no_grad():
            next_state = encode_state(
                params, H, u, env.neighborhood(u), literal_eq1=literal_eq1
            )
    priority = 0.0
    if buffer is not None:
        buffer.record_reward(u, reward, minute)
        stored = buffer.push(
            Transition(
                viewer=u,
                state=state,
                action=dist,
                mask=mask,
                chosen=chosen,
                reward=reward,
                time=minute,
                next_state=next_state,
            )
        )
        priority = stored.priority
    return StepRecord(
        viewer=u,
        minute=minute,
        neighbors=neighbors,
        mask=mask,
        state=state,
        action=dist,
        chosen=chosen,
        proposed=proposed,
        reward=reward,
        q_value=q_value,
        priority=priority,
        next_state=next_state,
    )


def run_episode(
    env: StreamingEnvironment,
    params: ParameterSet,
    epsilon: float,
    seed: int | np.random.Generator,
    *,
    buffer: ReplayBuffer | None = None,
    literal_eq1: bool = False,
    collect_next_state: bool = False,
) -> EpisodeResult:
    """Roll the whole event forward under fixed parameters.

    Replay mode: one acting opportunity per trace interaction (its source).
    Generative mode: each minute, every viewer that has interacted before
    acts once. Returns the trajectory plus per-minute reward sums.
    """
    if env.num_viewers > params.dims.max_viewers:
        raise ValueError(
            f"event has {env.num_viewers} viewers but the action space holds "
            f"only {params.dims.max_viewers}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    env.reset()
    with torch.no_grad():
        H = compute_signature(params, env.roster(), env.event_id)
    records: list[StepRecord] = []
    if env.mode == REPLAY:
        while not env.done:
            it = env.peek()
            assert it is not None
            records.append(
                act_once(
                    env, it.source, it.minute, params, H, epsilon, rng, buffer,
                    literal_eq1=literal_eq1, collect_next_state=collect_next_state,
                )
            )
    else:
        while (minute := env.advance_minute()) is not None:
            for u in env.acting_viewers():
                records.append(
                    act_once(
                        env, u, minute, params, H, epsilon, rng, buffer,
                        literal_eq1=literal_eq1, collect_next_state=collect_next_state,
                    )
                )
    sums: dict[int, float] = {}
    for rec in records:
        sums[rec.minute] = sums.get(rec.minute, 0.0) + rec.reward
    return EpisodeResult(
        records=tuple(records),
        minute_reward_sums=tuple(sorted(sums.items())),
        agreements=env.agreements,
        mismatches=env.mismatches,
    )
