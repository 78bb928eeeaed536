#!/usr/bin/env python3
"""Two-level fitted-policy-evaluation sweep on the stock tabular instance.

Writes the per-cell table to <out>/sweep.csv and prints median error curves
with the utterance-view log-log slope.
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from turnrl.fpe import compare_levels, loglog_slope, sweep_summary
from turnrl.presets import fpe_sweep_spec


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/fpe", help="output directory")
    ap.add_argument("--seeds", type=int, default=None,
                    help="number of seeds (default: the preset's 20)")
    ap.add_argument("--instance-seed", type=int, default=0)
    args = ap.parse_args()

    spec = fpe_sweep_spec(args.instance_seed)
    seeds = range(args.seeds) if args.seeds is not None else spec["seeds"]
    rows = compare_levels(spec["mdp"], spec["pi"], spec["grid"], seeds,
                          spec["fclass"], k_policy=spec["k_policy"],
                          ridge=spec["ridge"])

    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "sweep.csv")
    with open(table, "w") as fh:
        fh.write("view,N,K,M,seed,advantage_error\n")
        for r in rows:
            fh.write(f"{r['view']},{r['N']},{r['K']},{r['M']},{r['seed']},{r['advantage_error']!r}\n")

    med = {}
    for s in sweep_summary(rows):
        med[(s["view"], s["N"])] = s["median_error"]
    grid = list(spec["grid"])
    u = [med[("utterance", n)] for n in grid]
    t = [med[("token", n)] for n in grid]
    print("N          " + " ".join(f"{n:>9d}" for n in grid))
    print("utterance  " + " ".join(f"{x:9.4f}" for x in u))
    print("token      " + " ".join(f"{x:9.4f}" for x in t))
    print(f"utterance log-log slope: {loglog_slope(grid, u):+.3f}")
    print(f"token >= utterance at every N: {all(tv >= uv for tv, uv in zip(t, u))}")
    print(f"table written to {table}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
