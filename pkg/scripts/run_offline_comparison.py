#!/usr/bin/env python3
"""Offline comparison on a fixed mixed-quality GuessGame-10 dataset.

Rolls the behavior mixture once, trains each variant on the shared dataset
across seeds, and prints median final evaluation returns.
"""
import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from turnrl.envs import generate_offline_dataset
from turnrl.presets import (OFFLINE_DATASET_EPISODES, OFFLINE_DATASET_EPSILON,
                            OFFLINE_DATASET_SEED, guess10_env, offline_config)
from turnrl.trainer import filtered_bc_train, train

VARIANTS = ("iql_awr", "sarsa_awr", "filtered_bc", "bc")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    env = guess10_env()
    dataset = generate_offline_dataset(env, OFFLINE_DATASET_EPSILON,
                                       OFFLINE_DATASET_EPISODES,
                                       OFFLINE_DATASET_SEED)
    print(f"dataset: {len(dataset)} episodes, "
          f"mean return {np.mean([t.reward_sum() for t in dataset]):.2f}")

    rows = []
    for variant in VARIANTS:
        for seed in args.seeds:
            cfg = offline_config(variant, seed)
            runner = filtered_bc_train if cfg.algorithm == "filtered_bc" else train
            t0 = time.time()
            metrics = runner(cfg, env=guess10_env(), dataset=dataset)
            dt = time.time() - t0
            rows.append((variant, seed, metrics.final_eval_return))
            print(f"{variant:12s} seed={seed} final_return={metrics.final_eval_return:8.3f} "
                  f"({dt:.0f}s)", flush=True)

    print()
    for variant in VARIANTS:
        finals = [r[2] for r in rows if r[0] == variant]
        print(f"{variant:12s} median final return: {np.median(finals):8.3f}")

    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write("variant,seed,final_return\n")
            for variant, seed, ret in rows:
                fh.write(f"{variant},{seed},{ret!r}\n")
        print(f"table written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
