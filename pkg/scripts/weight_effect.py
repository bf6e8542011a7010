"""Entry-guard weight sweep: stage-4 trials for a light and a heavy guard."""

import argparse
from pathlib import Path

from introsect.harness import ExperimentConfig, run_sweep, write_sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--weights", default="4000,9300")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="results/weight")
    args = ap.parse_args()
    weights = [int(w) for w in args.weights.split(",")]
    rep = run_sweep(ExperimentConfig(), "consensus_weight", weights, range(args.seeds))
    write_sweep(rep, Path(args.out))
    for w in weights:
        eg = sorted(r["trials"] for r in rep["rows"] if r["value"] == w and r["node"] == "EG")
        print(f"EG weight {w:>6}: trials {eg}  median {rep['medians'][w]['per_stage'][4]}")


if __name__ == "__main__":
    main()
