#!/usr/bin/env python3
"""Probe a checkpoint's behavior in the generative simulator.

Rolls the greedy policy and a uniform-random reference through the same
simulated event and reports mean reward (overall and first 10 minutes) and
the fraction of picks that land inside the acting viewer's office.

    python3 scripts/simulate_tracker.py --checkpoint runs/.../adapted-event-028.npz
"""

import argparse
import sys

from metatracker.experiment import ExperimentConfig, load_config, simulate_policy
from metatracker.nn import initialize, load_checkpoint


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="run config JSON (default: built-in)")
    parser.add_argument("--checkpoint", default=None, help="npz checkpoint (default: fresh init)")
    parser.add_argument("--sim-seed", type=int, default=None, help="simulated event seed")
    parser.add_argument("--seed", type=int, default=0, help="init/episode seed")
    args = parser.parse_args(argv)

    config = load_config(args.config) if args.config else ExperimentConfig()
    synth = config.data.synthetic
    if synth is None:
        parser.error("the config has no synthetic event section to simulate")
    if args.checkpoint:
        params, _, _ = load_checkpoint(args.checkpoint)
        origin = args.checkpoint
    else:
        params = initialize(config.dims, args.seed)
        origin = f"fresh initialization (seed {args.seed})"
    sim_seed = args.sim_seed if args.sim_seed is not None else config.env.sim_seed

    greedy = simulate_policy(params, synth, sim_seed, epsilon=0.0, episode_seed=args.seed)
    uniform = simulate_policy(params, synth, sim_seed, epsilon=1.0, episode_seed=args.seed + 1)

    print(f"parameters: {origin}")
    print(f"simulated event: seed {sim_seed}, {synth.num_viewers} viewers, "
          f"{synth.duration_minutes} minutes, {greedy.num_actions} actions")
    print(f"{'policy':<10} {'mean reward':>12} {'first 10 min':>13} {'intra-office':>13}")
    for label, report in (("greedy", greedy), ("uniform", uniform)):
        print(
            f"{label:<10} {report.mean_reward:>12.4f} "
            f"{report.mean_reward_first_10:>13.4f} {report.intra_office_rate:>12.1%}"
        )
    if uniform.mean_reward_first_10 > 0:
        ratio = greedy.mean_reward_first_10 / uniform.mean_reward_first_10
        print(f"\ngreedy / uniform first-10-minute reward: {ratio:.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
