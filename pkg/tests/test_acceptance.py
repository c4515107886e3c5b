"""End-to-end acceptance battery.

Eight checks, each printing one PASS/FAIL line (run with ``-s`` to see them
on success). The slow ones (5, 6, 8) share a single session-scoped ablation
suite: all four variants meta-trained/adapted/evaluated over five seeds at
the package-default configuration.
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest
import torch

from metatracker.agent import TrainConfig, actor_loss, critic_loss
from metatracker.env import StepRecord
from metatracker.experiment import (
    VARIANT_NAMES,
    ExperimentConfig,
    build_tasks,
    run_experiment,
    run_seed,
    simulate_policy,
)
from metatracker.meta import (
    SignatureBuffer,
    meta_actor_loss,
    meta_critic_loss,
    signature_divergence,
)
from metatracker.nn import (
    DTYPE,
    GraphSignature,
    NetworkDims,
    actor_forward,
    actor_log_probs,
    attention_coefficients,
    compute_signature,
    critic_forward,
    gradient,
    load_checkpoint,
)
from metatracker.metrics import mae, mse, rmse
from metatracker.replay import ReplayBuffer, Transition

from helpers import fd_gradients, max_rel_error, random_mask, random_neighbors, random_params

SEEDS = [0, 1, 2, 3, 4]


def verdict(label: str, ok: bool, detail: str) -> str:
    line = f"[{label}] {'PASS' if ok else 'FAIL'}: {detail}"
    print("\n" + line, flush=True)
    return line


# --------------------------------------------------------------------------
# 1. gradient correctness against central finite differences


GRAD_DIMS = NetworkDims(d=4, d_s=8, max_viewers=6, hidden=8)


def _random_transitions(rng, count=3):
    batch = []
    for _ in range(count):
        mask = random_mask(rng, GRAD_DIMS.max_viewers, min_true=2)
        on = np.flatnonzero(mask.numpy())
        batch.append(
            Transition(
                viewer=int(rng.integers(0, GRAD_DIMS.max_viewers)),
                state=torch.from_numpy(rng.normal(size=GRAD_DIMS.d_s)).to(DTYPE),
                action=torch.from_numpy(
                    rng.dirichlet(np.ones(GRAD_DIMS.max_viewers))
                ).to(DTYPE),
                mask=mask,
                chosen=int(rng.choice(on)),
                reward=float(rng.uniform(0, 1)),
                time=0,
            )
        )
    return batch


def _random_records(rng, count=3):
    records = []
    for i in range(count):
        u = int(rng.integers(0, GRAD_DIMS.max_viewers))
        mask = random_mask(rng, GRAD_DIMS.max_viewers, min_true=2)
        on = np.flatnonzero(mask.numpy())
        records.append(
            StepRecord(
                viewer=u,
                minute=i,
                neighbors=random_neighbors(rng, u, GRAD_DIMS.max_viewers),
                mask=mask,
                state=torch.from_numpy(rng.normal(size=GRAD_DIMS.d_s)).to(DTYPE),
                action=torch.from_numpy(
                    rng.dirichlet(np.ones(GRAD_DIMS.max_viewers))
                ).to(DTYPE),
                chosen=int(rng.choice(on)),
                proposed=int(rng.choice(on)),
                reward=float(rng.uniform(0, 1)),
                q_value=float(rng.uniform(0, 1)),
            )
        )
    return records


def _random_buffer(rng):
    buffer = SignatureBuffer(4)
    for i in range(int(rng.integers(1, 3))):
        buffer.push(
            GraphSignature(
                values=torch.from_numpy(rng.normal(size=2 * GRAD_DIMS.d_s)).to(DTYPE),
                event_id=f"seen-{i}",
            )
        )
    return buffer


def test_1_gradients_match_finite_differences():
    start = time.time()
    instances = 50
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([12345, i])
        params = random_params(GRAD_DIMS, rng, scale=0.4)
        target = i % 5
        if target == 0:
            # the actor objective holds its advantage factor constant, so the
            # finite-difference oracle evaluates the same frozen-advantage form
            batch = _random_transitions(rng)
            with torch.no_grad():
                advantages = [
                    tr.reward - critic_forward(params, tr.state, tr.action).item()
                    for tr in batch
                ]

            def frozen(p):
                terms = [
                    actor_log_probs(p, tr.state, tr.mask)[tr.chosen] * adv
                    for tr, adv in zip(batch, advantages)
                ]
                return -torch.stack(terms).mean()

            analytic = gradient(actor_loss(params, batch), params)
            numeric = fd_gradients(frozen, params)
        elif target == 1:
            batch = _random_transitions(rng)
            analytic = gradient(critic_loss(params, batch), params)
            numeric = fd_gradients(lambda p: critic_loss(p, batch), params)
        else:
            records = _random_records(rng)
            buffer = _random_buffer(rng)
            roster = range(GRAD_DIMS.max_viewers)
            lam = float(rng.uniform(0.2, 2.0))
            if target == 2:
                def loss_fn(p):
                    H = compute_signature(p, roster, "query-event")
                    return meta_actor_loss(p, records, H, buffer, lam)
            elif target == 3:
                def loss_fn(p):
                    H = compute_signature(p, roster, "query-event")
                    return meta_critic_loss(p, records, H, buffer, lam)
            else:
                def loss_fn(p):
                    H = compute_signature(p, roster, "query-event")
                    return signature_divergence(H, buffer)
            analytic = gradient(loss_fn(params), params)
            numeric = fd_gradients(loss_fn, params)
        worst = max(worst, max_rel_error(analytic, numeric))
    elapsed = time.time() - start
    ok = worst <= 1e-4 and elapsed < 60
    line = verdict(
        "1 gradient-correctness",
        ok,
        f"{instances} instances across 5 loss forms, worst relative error "
        f"{worst:.2e} (bar 1e-4), {elapsed:.1f}s (bar 60s)",
    )
    assert ok, line


# --------------------------------------------------------------------------
# 2. distribution contracts


def test_2_distribution_contracts():
    start = time.time()
    worst_coeff = 0.0
    worst_actor = 0.0
    rng = np.random.default_rng(777)
    params = None
    for i in range(1000):
        if i % 50 == 0:
            params = random_params(GRAD_DIMS, rng, scale=0.6)
        u = int(rng.integers(0, GRAD_DIMS.max_viewers))
        neighbors = random_neighbors(rng, u, GRAD_DIMS.max_viewers)
        H = GraphSignature(
            values=torch.from_numpy(rng.normal(size=2 * GRAD_DIMS.d_s)).to(DTYPE),
            event_id="ev",
        )
        with torch.no_grad():
            coeffs = attention_coefficients(params, H, u, neighbors)
            worst_coeff = max(worst_coeff, abs(coeffs.sum().item() - 1.0))
            assert (coeffs >= 0).all()

            mask = random_mask(rng, GRAD_DIMS.max_viewers)
            state = torch.from_numpy(rng.normal(size=GRAD_DIMS.d_s)).to(DTYPE)
            dist = actor_forward(params, state, mask)
            assert (dist[~mask] == 0.0).all()
            assert (dist >= 0).all()
            worst_actor = max(worst_actor, abs(dist.sum().item() - 1.0))
    elapsed = time.time() - start
    ok = worst_coeff <= 1e-6 and worst_actor <= 1e-6 and elapsed < 60
    line = verdict(
        "2 distribution-contracts",
        ok,
        f"1000 states: attention sum error {worst_coeff:.2e}, actor sum error "
        f"{worst_actor:.2e} (bar 1e-6), masked slots exactly zero, "
        f"{elapsed:.1f}s (bar 60s)",
    )
    assert ok, line


# --------------------------------------------------------------------------
# 3. replay-priority oracle


def _oracle_kl(cur_counts, cur_total, prev_counts, prev_total, bins=10, alpha=1.0):
    out = 0.0
    for i in range(bins):
        pp = (cur_counts[i] + alpha) / (cur_total + alpha * bins)
        qq = (prev_counts[i] + alpha) / (prev_total + alpha * bins)
        out += pp * math.log(pp / qq)
    return out


def test_3_replay_priority_oracle():
    start = time.time()
    checked_priorities = 0
    for case in range(200):
        rng = np.random.default_rng([999, case])
        capacity = int(rng.integers(1, 201))
        buffer = ReplayBuffer(capacity=capacity)
        # independent shadow model: per-viewer binned histograms + ring
        shadow: dict[int, dict] = {}
        stored: list[tuple[int, float, Transition]] = []  # (seq, priority, obj)
        seq = 0
        minute = 0
        for _ in range(int(rng.integers(5, 120))):
            viewer = int(rng.integers(0, 6))
            reward = float(rng.uniform(0, 1))
            if rng.random() < 0.15:
                minute += int(rng.integers(1, 3))
            model = shadow.setdefault(
                viewer,
                {"cur": [0] * 10, "cur_n": 0, "prev": [0] * 10, "prev_n": 0, "minute": minute},
            )
            if minute > model["minute"]:
                model["prev"], model["prev_n"] = model["cur"], model["cur_n"]
                model["cur"], model["cur_n"] = [0] * 10, 0
                model["minute"] = minute
            bin_index = min(int(reward * 10), 9)
            model["cur"][bin_index] += 1
            model["cur_n"] += 1
            expected_priority = _oracle_kl(
                model["cur"], model["cur_n"], model["prev"], model["prev_n"]
            )

            buffer.record_reward(viewer, reward, minute)
            transition = Transition(
                viewer=viewer,
                state=torch.zeros(2, dtype=DTYPE),
                action=torch.full((4,), 0.25, dtype=DTYPE),
                mask=torch.ones(4, dtype=torch.bool),
                chosen=0,
                reward=reward,
                time=minute,
            )
            kept = buffer.push(transition)
            assert kept.priority == expected_priority  # bit-exact
            checked_priorities += 1
            stored.append((seq, kept.priority, kept))
            seq += 1
            if len(stored) > capacity:
                stored.pop(0)
        k = int(rng.integers(1, 12))
        expected = [
            obj for _, _, obj in sorted(stored, key=lambda item: (-item[1], -item[0]))
        ][: min(k, len(stored))]
        got = buffer.sample_top_k(k)
        assert len(got) == len(expected)
        for a, b in zip(got, expected):
            assert a is b
    elapsed = time.time() - start
    ok = elapsed < 60
    line = verdict(
        "3 replay-priority-oracle",
        ok,
        f"200 buffers, {checked_priorities} priorities bit-exact vs direct KL, "
        f"top-k identical to brute-force (priority desc, newer first), "
        f"{elapsed:.1f}s (bar 60s)",
    )
    assert ok, line


# --------------------------------------------------------------------------
# 4. metric oracle


def test_4_metric_oracle():
    start = time.time()
    worst = 0.0
    rng = np.random.default_rng(4242)
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        q = rng.uniform(0, 1, size=n)
        r = rng.uniform(0, 1, size=n)
        pairs = list(zip(q.tolist(), r.tolist()))
        oracle_mse = float(np.mean((q - r) ** 2))
        oracle_rmse = float(np.sqrt(oracle_mse))
        oracle_mae = float(np.mean(np.abs(q - r)))
        worst = max(
            worst,
            abs(mse(pairs) - oracle_mse),
            abs(rmse(pairs) - oracle_rmse),
            abs(mae(pairs) - oracle_mae),
        )
        assert mae(pairs) <= rmse(pairs) + 1e-15
    elapsed = time.time() - start
    ok = worst <= 1e-9 and elapsed < 30
    line = verdict(
        "4 metric-oracle",
        ok,
        f"1000 residual sets, worst deviation {worst:.2e} (bar 1e-9), "
        f"mae <= rmse everywhere, {elapsed:.1f}s (bar 30s)",
    )
    assert ok, line


# --------------------------------------------------------------------------
# 5-8. the shared ablation suite


@pytest.fixture(scope="session")
def ablation_suite(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-suite")
    summaries = {}
    elapsed = {}
    for variant in VARIANT_NAMES:
        config = ExperimentConfig(name="acceptance", variant=variant)
        start = time.time()
        summaries[variant] = run_experiment(config, SEEDS, str(root))
        elapsed[variant] = time.time() - start
    return {"root": root, "summaries": summaries, "elapsed": elapsed}


def _median_rmse(suite, variant):
    return suite["summaries"][variant]["rmse"]["median_over_seeds"]


def test_5_fast_adaptation_beats_scratch(ablation_suite):
    melanie = _median_rmse(ablation_suite, "MELANIE")
    scratch = _median_rmse(ablation_suite, "MELANIE-B")  # same adaptation, fresh init
    improvement = (scratch - melanie) / scratch
    elapsed = ablation_suite["elapsed"]["MELANIE"] + ablation_suite["elapsed"]["MELANIE-B"]
    ok = improvement >= 0.15 and elapsed <= 1800
    line = verdict(
        "5 fast-adaptation",
        ok,
        f"median query RMSE {melanie:.4f} meta-trained vs {scratch:.4f} scratch "
        f"over {len(SEEDS)} seeds = {improvement:.1%} lower (bar 15%), "
        f"{elapsed:.0f}s (bar 1800s)",
    )
    assert ok, line


def test_6_ablation_ordering(ablation_suite):
    medians = {v: _median_rmse(ablation_suite, v) for v in VARIANT_NAMES}
    others = {v: m for v, m in medians.items() if v != "MELANIE"}
    full_lowest = medians["MELANIE"] <= min(others.values())
    b_le_t = medians["MELANIE-B"] <= medians["MELANIE-T"]
    elapsed = sum(ablation_suite["elapsed"].values())
    ok = full_lowest and b_le_t and elapsed <= 3600
    detail = ", ".join(f"{v} {m:.4f}" for v, m in medians.items())
    line = verdict(
        "6 ablation-ordering",
        ok,
        f"median RMSE {detail}; full variant lowest={full_lowest}, "
        f"B<=T={b_le_t}, suite {elapsed:.0f}s (bar 3600s)",
    )
    assert ok, line


def test_7_reward_adaptation(ablation_suite):
    start = time.time()
    config = ExperimentConfig(name="acceptance", variant="MELANIE")
    run_dir = ablation_suite["root"] / "acceptance-MELANIE" / "0"
    _, _, test_tasks = build_tasks(config)
    held_out = test_tasks[0].network.event_id
    adapted, _, _ = load_checkpoint(
        str(run_dir / "checkpoints" / f"adapted-{held_out}.npz")
    )
    synth = config.data.synthetic
    sim_seed = config.env.sim_seed  # a simulated event no training seed produced
    greedy = simulate_policy(adapted, synth, sim_seed, epsilon=0.0, episode_seed=1)
    uniform = simulate_policy(adapted, synth, sim_seed, epsilon=1.0, episode_seed=2)
    ratio = greedy.mean_reward_first_10 / uniform.mean_reward_first_10
    intra = greedy.intra_office_rate
    elapsed = time.time() - start
    ok = ratio >= 1.3 and intra >= 0.7 and elapsed <= 600
    line = verdict(
        "7 reward-adaptation",
        ok,
        f"greedy first-10-minute reward {greedy.mean_reward_first_10:.4f} vs "
        f"uniform {uniform.mean_reward_first_10:.4f} = {ratio:.2f}x (bar 1.30x); "
        f"intra-office rate {intra:.1%} (bar 70%); {elapsed:.0f}s (bar 600s)",
    )
    assert ok, line


def test_8_bit_identical_reruns(ablation_suite):
    config = ExperimentConfig(name="acceptance", variant="MELANIE")
    first_dir = ablation_suite["root"] / "acceptance-MELANIE" / "0"
    rerun_dir = ablation_suite["root"] / "rerun-MELANIE" / "0"
    rerun = run_seed(config, 0, str(rerun_dir), tasks=build_tasks(config))
    mismatches = []
    for report in rerun.reports:
        with open(
            first_dir / "reports" / f"{report.event_id}.json", encoding="utf-8"
        ) as fh:
            original = json.load(fh)
        for metric in ("rmse", "mae", "mse"):
            if getattr(report, metric) != original[metric]:
                mismatches.append(
                    f"{report.event_id}.{metric}: {getattr(report, metric)!r} "
                    f"!= {original[metric]!r}"
                )
        if [list(p) for p in report.reward_curve] != original["reward_curve"]:
            mismatches.append(f"{report.event_id}.reward_curve differs")
    ok = not mismatches
    line = verdict(
        "8 determinism",
        ok,
        "meta-train -> adapt -> evaluate reproduced bit-identical summary "
        "metrics on a second run"
        if ok
        else "; ".join(mismatches),
    )
    assert ok, line
