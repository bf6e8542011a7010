"""Per-hop trial tables at the three time-of-day anchors.

    python scripts/trials_per_hop.py --seeds 5 --out results/tables
"""

import argparse
import json
from pathlib import Path

from introsect.harness import ExperimentConfig, run_sweep, sweep_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", default="results/tables")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rep = run_sweep(ExperimentConfig(), "time_of_day", [2.0, 10.0, 18.0], range(args.seeds))
    (out / "trials_per_hop.csv").write_text(sweep_csv(rep))
    for hour in (2.0, 10.0, 18.0):
        print(f"\n{int(hour):02d}:00 UTC")
        print(f"{'seed':>4} " + " ".join(f"{h:>12}" for h in ("EG", "M0", "M1", "IP")))
        for seed in range(args.seeds):
            rows = [r for r in rep["rows"] if r["value"] == hour and r["seed"] == seed]
            cells = [f"{r['trials']}@{r['consensus_weight']}" for r in rows]
            print(f"{seed:>4} " + " ".join(f"{c:>12}" for c in cells))
    print(f"\npooled spearman(trials, weight) = {rep['spearman_trials_vs_weight']:.3f}")
    medians = {str(k): v for k, v in rep["medians"].items()}
    (out / "medians.json").write_text(json.dumps(medians, indent=2) + "\n")


if __name__ == "__main__":
    main()
