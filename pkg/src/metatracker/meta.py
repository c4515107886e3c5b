"""Meta-learning across events.

The outer loop is first-order: gradients of the query-set losses are taken
at the task-adapted parameters and applied to the global ones. A FIFO
buffer of past event signatures turns into a divergence regularizer that
pulls each new event's signature toward the family the tracker has seen.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .agent import TrainConfig, adapt_task
from .env import StepRecord, StreamingEnvironment, run_episode
from .graph import Task
from .instrumentation import counters
from .metrics import evaluate
from .nn import (
    DTYPE,
    GraphSignature,
    NetworkDims,
    ParameterSet,
    actor_log_probs,
    apply_gradients,
    compute_signature,
    critic_forward,
    encode_state,
    gradient,
    initialize,
)

logger = logging.getLogger(__name__)


class SignatureBuffer:
    """FIFO store of the C most recent event signatures (detached copies).

    Re-pushing an event updates its entry in place, keeping its order slot;
    only genuinely new events can evict the oldest.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: list[GraphSignature] = []

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    @property
    def entries(self) -> tuple[GraphSignature, ...]:
        return tuple(self._entries)

    def push(self, H: GraphSignature) -> None:
        counters.increment("signature_pushes")
        detached = H.detached()
        for i, entry in enumerate(self._entries):
            if entry.event_id == H.event_id:
                self._entries[i] = detached
                return
        self._entries.append(detached)
        if len(self._entries) > self.capacity:
            self._entries.pop(0)

    def save(self, path: str) -> None:
        payload = {
            "capacity": self.capacity,
            "entries": [
                {"event_id": e.event_id, "values": e.values.tolist()} for e in self._entries
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "SignatureBuffer":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        buffer = cls(payload["capacity"])
        for entry in payload["entries"]:
            buffer._entries.append(
                GraphSignature(
                    values=torch.tensor(entry["values"], dtype=DTYPE),
                    event_id=entry["event_id"],
                )
            )
        if len(buffer._entries) > buffer.capacity:
            raise ValueError(f"{path}: more entries than capacity {buffer.capacity}")
        return buffer


@dataclass(frozen=True)
class MetaConfig:
    """Outer-loop hyperparameters.

    signature_lambda weighs the divergence regularizer; +1.0 penalizes
    divergence from buffered signatures, -1.0 rewards it (the two readings
    the source equations admit — both are exercised in tests).
    tasks_per_epoch=None uses every training task each epoch.
    """

    meta_eta: float = 0.05
    signature_lambda: float = 1.0
    epochs: int = 6
    tasks_per_epoch: int | None = None
    signature_buffer_capacity: int = 32
    patience: int = 3

    def __post_init__(self):
        if self.meta_eta <= 0:
            raise ValueError(f"meta_eta must be > 0, got {self.meta_eta}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.tasks_per_epoch is not None and self.tasks_per_epoch < 1:
            raise ValueError(f"tasks_per_epoch must be >= 1, got {self.tasks_per_epoch}")
        if self.signature_buffer_capacity < 1:
            raise ValueError(
                f"signature_buffer_capacity must be >= 1, got {self.signature_buffer_capacity}"
            )
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


def signature_divergence(H_i: GraphSignature, buffer: SignatureBuffer) -> torch.Tensor:
    """Mean KL(softmax(H_i) || softmax(H_j)) over buffered other-event signatures.

    Softmax turns the raw signature vectors into distributions, which keeps
    the divergence finite and differentiable for any real signatures. The
    event's own buffered signature is excluded; an empty (or only-self)
    buffer contributes exactly 0.
    """
    others = [e for e in buffer if e.event_id != H_i.event_id]
    if not others:
        return torch.zeros((), dtype=DTYPE)
    p = torch.softmax(H_i.values, dim=0)
    log_p = torch.log_softmax(H_i.values, dim=0)
    total = torch.zeros((), dtype=DTYPE)
    for other in others:
        if other.values.shape != H_i.values.shape:
            raise ValueError(
                f"signature length mismatch: {tuple(H_i.values.shape)} vs "
                f"{tuple(other.values.shape)} ({other.event_id!r})"
            )
        log_q = torch.log_softmax(other.values, dim=0)
        total = total + (p * (log_p - log_q)).sum()
    return total / len(others)


def _check_records(records: list[StepRecord]) -> None:
    if not records:
        raise ValueError("meta loss needs a non-empty replayed query set")


def meta_actor_loss(
    params: ParameterSet,
    records: list[StepRecord],
    H_i: GraphSignature,
    buffer: SignatureBuffer,
    lambda_sig: float,
    *,
    literal_eq1: bool = False,
) -> torch.Tensor:
    """Query actor loss plus lambda_sig * signature divergence.

    States are re-encoded differentiably from the recorded neighborhoods
    (under the given signature), so this loss trains the actor weights and
    the shared encoder parameters. The advantage uses the record's stored
    critic value — a constant — in place of a live critic read.
    """
    _check_records(records)
    counters.increment("meta_loss_evaluations")
    terms = []
    for rec in records:
        if not bool(rec.mask[rec.chosen]):
            logger.warning(
                "skipping query record of viewer %d: chosen index %d is masked",
                rec.viewer, rec.chosen,
            )
            continue
        state = encode_state(params, H_i, rec.viewer, rec.neighbors, literal_eq1=literal_eq1)
        log_p = actor_log_probs(params, state, rec.mask)[rec.chosen]
        terms.append(log_p * (rec.reward - rec.q_value))
    if not terms:
        raise ValueError("every query record was skipped as stale")
    base = -torch.stack(terms).mean()
    return base + lambda_sig * signature_divergence(H_i, buffer)


def meta_critic_loss(
    params: ParameterSet,
    records: list[StepRecord],
    H_i: GraphSignature,
    buffer: SignatureBuffer,
    lambda_sig: float,
) -> torch.Tensor:
    """Query critic loss plus lambda_sig * signature divergence.

    The critic term evaluates stored states/actions (constants), so its
    gradient reaches only the critic weights; the divergence term reaches
    the signature parameters and embeddings through H_i.
    """
    _check_records(records)
    counters.increment("meta_loss_evaluations")
    residuals = [
        rec.reward - critic_forward(params, rec.state, rec.action) for rec in records
    ]
    base = torch.stack(residuals).pow(2).mean()
    return base + lambda_sig * signature_divergence(H_i, buffer)


def replay_query(
    task: Task, params: ParameterSet, *, literal_eq1: bool = False
) -> list[StepRecord]:
    """Greedy, update-free replay of the query set with support preloaded."""
    env = StreamingEnvironment(
        mode="replay",
        network=task.network,
        replay_range=task.query,
        preload=task.support,
    )
    episode = run_episode(env, params, 0.0, 0, literal_eq1=literal_eq1)
    return list(episode.records)


@dataclass(frozen=True)
class MetaTaskRow:
    """One (epoch, task) line of the meta-training log."""

    epoch: int
    task_id: str
    inner_actor_loss: float
    inner_critic_loss: float
    meta_actor_loss: float
    meta_critic_loss: float
    mean_signature_divergence: float


@dataclass
class MetaResult:
    params: ParameterSet
    history: list[MetaTaskRow] = field(default_factory=list)
    signature_buffer: SignatureBuffer | None = None
    validation_rmse: list[float] = field(default_factory=list)
    best_epoch: int | None = None


def _validation_rmse(
    params: ParameterSet,
    tasks: list[Task],
    train_config: TrainConfig,
    use_kl_priority: bool,
    epoch: int,
) -> float:
    values = []
    for i, task in enumerate(tasks):
        rng = np.random.default_rng([train_config.seed, 1_000_000 + epoch, i])
        adapted = adapt_task(
            params, task, train_config, use_kl_priority=use_kl_priority, rng=rng
        ).params
        values.append(
            evaluate(adapted, task, literal_eq1=train_config.literal_eq1).rmse
        )
    return float(np.mean(values))


def meta_train(
    tasks: list[Task],
    config: MetaConfig,
    train_config: TrainConfig,
    dims: NetworkDims,
    *,
    validation_tasks: list[Task] | None = None,
    use_signature_buffer: bool = True,
    use_kl_priority: bool = True,
) -> MetaResult:
    """Learn global parameters across the training tasks.

    Per task: inner-loop adaptation on the support set, a greedy query
    replay with the adapted parameters, then one first-order meta step —
    gradients of the two query losses at the adapted parameters, summed and
    applied to the global parameters. The event's signature (computed from
    the adapted parameters) is pushed to the buffer afterwards, so an event
    is never regularized against itself within its own update.

    With validation tasks, the best-validation-RMSE snapshot is returned
    and training stops early after ``patience`` epochs without improvement.
    """
    if not tasks:
        raise ValueError("meta_train needs at least one task")
    for task in tasks:
        if not task.support_interactions or not task.query_interactions:
            raise ValueError(
                f"task {task.network.event_id!r} has an empty support or query set"
            )
        if task.network.num_viewers > dims.max_viewers:
            raise ValueError(
                f"event {task.network.event_id!r} has {task.network.num_viewers} viewers "
                f"but max_viewers={dims.max_viewers}"
            )
    global_params = initialize(dims, train_config.seed)
    sig_buffer = SignatureBuffer(config.signature_buffer_capacity)
    lambda_sig = config.signature_lambda if use_signature_buffer else 0.0
    result = MetaResult(params=global_params, signature_buffer=sig_buffer)
    best_rmse = math.inf
    best_params = global_params
    best_epoch = None
    epochs_without_improvement = 0

    for epoch in range(config.epochs):
        order_rng = np.random.default_rng([train_config.seed, epoch])
        count = len(tasks) if config.tasks_per_epoch is None else min(
            config.tasks_per_epoch, len(tasks)
        )
        order = order_rng.permutation(len(tasks))[:count]
        for task_index in order:
            task = tasks[int(task_index)]
            event_id = task.network.event_id
            task_rng = np.random.default_rng([train_config.seed, epoch, int(task_index)])
            adapt_result = adapt_task(
                global_params,
                task,
                train_config,
                use_kl_priority=use_kl_priority,
                rng=task_rng,
            )
            adapted = adapt_result.params
            records = replay_query(task, adapted, literal_eq1=train_config.literal_eq1)
            roster = task.network.viewers()

            H_actor = compute_signature(adapted, roster, event_id)
            loss_a = meta_actor_loss(
                adapted, records, H_actor, sig_buffer, lambda_sig,
                literal_eq1=train_config.literal_eq1,
            )
            grads_a = gradient(loss_a, adapted)
            H_critic = compute_signature(adapted, roster, event_id)
            loss_c = meta_critic_loss(adapted, records, H_critic, sig_buffer, lambda_sig)
            grads_c = gradient(loss_c, adapted)
            combined = {name: grads_a[name] + grads_c[name] for name in grads_a}
            global_params = apply_gradients(global_params, combined, config.meta_eta)

            divergence = float(signature_divergence(H_critic.detached(), sig_buffer))
            if use_signature_buffer:
                sig_buffer.push(H_critic)
            last = adapt_result.metrics[-1] if adapt_result.metrics else None
            result.history.append(
                MetaTaskRow(
                    epoch=epoch,
                    task_id=event_id,
                    inner_actor_loss=last.actor_loss if last else math.nan,
                    inner_critic_loss=last.critic_loss if last else math.nan,
                    meta_actor_loss=loss_a.item(),
                    meta_critic_loss=loss_c.item(),
                    mean_signature_divergence=divergence,
                )
            )
        if validation_tasks:
            val = _validation_rmse(
                global_params, validation_tasks, train_config, use_kl_priority, epoch
            )
            result.validation_rmse.append(val)
            if val < best_rmse:
                best_rmse = val
                best_params = global_params
                best_epoch = epoch
                epochs_without_improvement = 0
            else:
                epochs_without_improvement += 1
                if epochs_without_improvement >= config.patience:
                    logger.info(
                        "stopping meta-training after epoch %d (no validation "
                        "improvement in %d epochs)", epoch, config.patience,
                    )
                    break

    result.params = best_params if validation_tasks else global_params
    result.best_epoch = best_epoch
    return result
