#!/usr/bin/env python3
"""Online comparison on GuessGame-10: the hierarchical actor-critic against
filtered behavior cloning and critic-reranked sampling, shared seeds.

Prints one row per (method, seed) and the per-method medians of the final
evaluation return.  Optionally writes a CSV.
"""
import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from turnrl.presets import (guess10_env, online_archer_config,
                            online_chai_config, online_filtered_bc_config)
from turnrl.trainer import chai_train, filtered_bc_train, train

METHODS = (
    ("archer", online_archer_config, train),
    ("filtered_bc", online_filtered_bc_config, filtered_bc_train),
    ("chai", online_chai_config, chai_train),
)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    rows = []
    for name, cfg_fn, runner in METHODS:
        for seed in args.seeds:
            t0 = time.time()
            metrics = runner(cfg_fn(seed), env=guess10_env())
            dt = time.time() - t0
            rows.append((name, seed, metrics.final_eval_return,
                         metrics.best_success_rate))
            print(f"{name:12s} seed={seed} final_return={metrics.final_eval_return:8.3f} "
                  f"best_success={metrics.best_success_rate:.2f} ({dt:.0f}s)", flush=True)

    print()
    for name, _, _ in METHODS:
        finals = [r[2] for r in rows if r[0] == name]
        print(f"{name:12s} median final return: {np.median(finals):8.3f}")

    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write("method,seed,final_return,best_success_rate\n")
            for name, seed, ret, succ in rows:
                fh.write(f"{name},{seed},{ret!r},{succ!r}\n")
        print(f"table written to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
