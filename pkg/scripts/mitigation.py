"""Paired mitigated/unmitigated runs for a few rebuild intervals."""

import argparse
import json
from pathlib import Path

from introsect.attack import evaluate_mitigation
from introsect.harness import ExperimentConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--intervals", default="300,600,1800")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--out", default="results/mitigation")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for iv in (float(x) for x in args.intervals.split(",")):
        rep = evaluate_mitigation(iv, ExperimentConfig(), range(args.seeds))
        rates = rep["convergence_rate"]
        print(f"rebuild every {iv / 60:.0f} min ({rep['builds_per_day']} builds/day)")
        for label in ("baseline", "mitigated"):
            print(f"  {label:>9}: " + " ".join(f"stage{k}={v:.2f}" for k, v in rates[label].items()))
        (out / f"mitigation_{int(iv)}.json").write_text(json.dumps(rep, indent=2, default=str) + "\n")


if __name__ == "__main__":
    main()
