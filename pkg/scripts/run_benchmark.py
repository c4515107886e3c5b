#!/usr/bin/env python3
"""Run the full ablation benchmark: every variant over a common seed set.

Each variant is meta-trained (where applicable), adapted on the held-out
test events, and evaluated on their query sets. Prints a comparison table
and the relative improvement of the full model over the scratch baseline.

    python3 scripts/run_benchmark.py --out runs --seeds 0,1,2,3,4
"""

import argparse
import dataclasses
import sys
import time

from metatracker.experiment import (
    VARIANT_NAMES,
    ExperimentConfig,
    load_config,
    run_experiment,
)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="run config JSON (default: built-in)")
    parser.add_argument("--out", default="runs", help="output root directory")
    parser.add_argument("--name", default="benchmark", help="run name prefix")
    parser.add_argument(
        "--seeds", default="0,1,2,3,4", help="comma-separated seed list"
    )
    parser.add_argument(
        "--variants",
        default=",".join(VARIANT_NAMES),
        help="comma-separated subset of variants to run",
    )
    args = parser.parse_args(argv)

    seeds = [int(s) for s in args.seeds.split(",") if s]
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANT_NAMES:
            parser.error(f"unknown variant {v!r}; expected one of {VARIANT_NAMES}")

    base = load_config(args.config) if args.config else ExperimentConfig()
    summaries = {}
    for variant in variants:
        config = dataclasses.replace(base, name=args.name, variant=variant)
        start = time.time()
        summaries[variant] = run_experiment(config, seeds, args.out)
        print(f"{variant}: done in {time.time() - start:.0f}s", flush=True)

    print()
    print(f"{'variant':<12} {'median rmse':>12} {'mean rmse':>12} {'mean mae':>12}")
    for variant in variants:
        s = summaries[variant]
        print(
            f"{variant:<12} {s['rmse']['median_over_seeds']:>12.4f} "
            f"{s['rmse']['mean']:>12.4f} {s['mae']['mean']:>12.4f}"
        )
    if "MELANIE" in summaries and "MELANIE-B" in summaries:
        full = summaries["MELANIE"]["rmse"]["median_over_seeds"]
        scratch = summaries["MELANIE-B"]["rmse"]["median_over_seeds"]
        print(
            f"\nmeta-trained vs scratch median RMSE: {full:.4f} vs {scratch:.4f} "
            f"({(scratch - full) / scratch:.1%} lower)"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
