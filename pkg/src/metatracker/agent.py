"""Task adaptation: actor/critic losses and the support-set training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .env import StreamingEnvironment, StepRecord, act_once, select_action  # noqa: F401
from .graph import Task
from .nn import (
    ParameterSet,
    actor_forward,
    actor_log_probs,
    apply_gradients,
    compute_signature,
    critic_forward,
    gradient,
)
from .replay import ReplayBuffer, Transition

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Inner-loop (task-adaptation) hyperparameters.

    eta: step size of the actor/critic updates. gamma: discount factor; only
    consulted by the optional bootstrap critic target. K: both the replay
    batch size and the top-K retrieval size (one constant). replay_capacity:
    buffer size D, K <= D. update_every: minutes of replayed interactions
    between gradient steps. Epsilon follows an exponential per-action decay
    from epsilon_start toward epsilon_end.
    """

    eta: float = 0.005
    gamma: float = 0.95
    epsilon_start: float = 0.5
    epsilon_end: float = 0.01
    epsilon_decay: float = 0.95
    K: int = 16
    replay_capacity: int = 200
    adaptation_steps: int = 5
    update_every: int = 1
    bootstrap: bool = False
    literal_eq1: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0,1], got {self.gamma}")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError(
                "epsilon schedule must satisfy 0 <= epsilon_end <= epsilon_start <= 1, "
                f"got ({self.epsilon_start}, {self.epsilon_end})"
            )
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError(f"epsilon_decay must be in (0,1], got {self.epsilon_decay}")
        if not 1 <= self.K <= self.replay_capacity:
            raise ValueError(
                f"need 1 <= K <= replay_capacity, got K={self.K}, "
                f"replay_capacity={self.replay_capacity}"
            )
        if self.adaptation_steps < 0:
            raise ValueError(f"adaptation_steps must be >= 0, got {self.adaptation_steps}")
        if self.update_every < 1:
            raise ValueError(f"update_every must be >= 1, got {self.update_every}")


def epsilon_at(config: TrainConfig, action_index: int) -> float:
    """Exploration rate before the (action_index+1)-th action of a task."""
    return max(config.epsilon_end, config.epsilon_start * config.epsilon_decay**action_index)


def _usable(batch: list[Transition]) -> list[Transition]:
    usable = []
    for tr in batch:
        if not bool(tr.mask[tr.chosen]):
            logger.warning(
                "skipping transition of viewer %d: chosen index %d is masked "
                "(stale action space)", tr.viewer, tr.chosen,
            )
            continue
        usable.append(tr)
    return usable


def actor_loss(params: ParameterSet, batch: list[Transition]) -> torch.Tensor:
    """-(1/K) sum log pi(chosen|s) * (R - Q_w(s,a)), advantage held constant.

    The advantage factor is detached, so no gradient reaches the critic
    from here; stored states are constants, so the gradient lands on the
    actor weights alone.
    """
    if not batch:
        raise ValueError("actor loss needs a non-empty batch")
    usable = _usable(batch)
    if not usable:
        raise ValueError("every transition in the batch was skipped as stale")
    terms = []
    for tr in usable:
        logp = actor_log_probs(params, tr.state, tr.mask)[tr.chosen]
        advantage = tr.reward - critic_forward(params, tr.state, tr.action).detach()
        terms.append(logp * advantage)
    return -torch.stack(terms).mean()


def critic_loss(
    params: ParameterSet,
    batch: list[Transition],
    *,
    bootstrap: bool = False,
    gamma: float = 0.0,
) -> torch.Tensor:
    """(1/K) sum (target - Q_w(s,a))^2; gradients reach the critic only.

    The default target is the immediate reward. In bootstrap mode the
    target adds gamma * Q_w(s', pi(s')) (detached, semi-gradient TD) for
    transitions that carry a next state; ones that don't fall back to the
    immediate reward.
    """
    if not batch:
        raise ValueError("critic loss needs a non-empty batch")
    residuals = []
    for tr in batch:
        target = torch.tensor(tr.reward, dtype=torch.float64)
        if bootstrap and tr.next_state is not None:
            with torch.no_grad():
                next_dist = actor_forward(params, tr.next_state, tr.mask)
                target = target + gamma * critic_forward(params, tr.next_state, next_dist)
        residuals.append(target - critic_forward(params, tr.state, tr.action))
    return torch.stack(residuals).pow(2).mean()


@dataclass(frozen=True)
class AdaptStep:
    """One gradient step's metrics row (the adapt CSV schema)."""

    step: int
    actor_loss: float
    critic_loss: float
    mean_priority: float
    epsilon: float


@dataclass
class AdaptResult:
    params: ParameterSet
    metrics: list[AdaptStep] = field(default_factory=list)
    records: list[StepRecord] = field(default_factory=list)
    buffer: ReplayBuffer | None = None
    agreements: int = 0
    mismatches: int = 0


def _gradient_step(
    params: ParameterSet,
    buffer: ReplayBuffer,
    config: TrainConfig,
    use_kl_priority: bool,
    rng: np.random.Generator,
    step_index: int,
    epsilon_now: float,
) -> tuple[ParameterSet, AdaptStep]:
    if use_kl_priority:
        batch = buffer.sample_top_k(config.K)
    else:
        batch = buffer.sample_uniform(config.K, rng)
    loss_a = actor_loss(params, batch)
    loss_c = critic_loss(params, batch, bootstrap=config.bootstrap, gamma=config.gamma)
    grads_a = gradient(loss_a, params)
    grads_c = gradient(loss_c, params)
    combined = {name: grads_a[name] + grads_c[name] for name in grads_a}
    updated = apply_gradients(params, combined, config.eta)
    row = AdaptStep(
        step=step_index,
        actor_loss=loss_a.item(),
        critic_loss=loss_c.item(),
        mean_priority=float(np.mean([tr.priority for tr in batch])),
        epsilon=epsilon_now,
    )
    return updated, row


def adapt_task(
    global_params: ParameterSet,
    task: Task,
    config: TrainConfig,
    *,
    use_kl_priority: bool = True,
    rng: np.random.Generator | None = None,
) -> AdaptResult:
    """Few-step adaptation on the task's support set.

    Replays the support interactions in order, pushing transitions into a
    fresh KL-prioritized buffer; at every ``update_every``-th minute
    boundary (and after the replay, if steps remain) performs one combined
    actor+critic gradient step on a sampled batch, up to adaptation_steps
    steps. The global parameters are never touched; the adapted clone is
    returned with the step metrics and the replayed trajectory.
    """
    if not task.support_interactions:
        raise ValueError("cannot adapt on an empty support set")
    network = task.network
    if network.num_viewers > global_params.dims.max_viewers:
        raise ValueError(
            f"event has {network.num_viewers} viewers but the action space holds "
            f"only {global_params.dims.max_viewers}"
        )
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    env = StreamingEnvironment(mode="replay", network=network, replay_range=task.support)
    env.reset()
    params = global_params.clone()
    buffer = ReplayBuffer(config.replay_capacity)
    with torch.no_grad():
        H = compute_signature(params, env.roster(), env.event_id)
    result = AdaptResult(params=params, buffer=buffer)
    updates = 0
    actions = 0
    current_minute: int | None = None
    minutes_since_update = 0

    def maybe_update() -> None:
        nonlocal updates, params, H
        if updates >= config.adaptation_steps or len(buffer) == 0:
            return
        eps_now = epsilon_at(config, actions)
        new_params, row = _gradient_step(
            params, buffer, config, use_kl_priority, rng, updates, eps_now
        )
        params = new_params
        with torch.no_grad():
            H = compute_signature(params, env.roster(), env.event_id)
        result.metrics.append(row)
        updates += 1

    while not env.done:
        interaction = env.peek()
        assert interaction is not None
        if current_minute is None:
            current_minute = interaction.minute
        elif interaction.minute != current_minute:
            minutes_since_update += 1
            if minutes_since_update >= config.update_every:
                maybe_update()
                minutes_since_update = 0
            current_minute = interaction.minute
        record = act_once(
            env,
            interaction.source,
            interaction.minute,
            params,
            H,
            epsilon_at(config, actions),
            rng,
            buffer,
            literal_eq1=config.literal_eq1,
            collect_next_state=config.bootstrap,
        )
        result.records.append(record)
        actions += 1
    while updates < config.adaptation_steps and len(buffer) > 0:
        maybe_update()
    result.params = params
    result.agreements = env.agreements
    result.mismatches = env.mismatches
    return result
