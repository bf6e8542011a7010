"""Grid over background intensity and weight spread against the desk-scale targets.

For each setting: full reconstructions out of N seeds, trial range, pooled
rank correlation with weight, and how many 10-minute-rebuild runs still
converge at stage >= 2.
"""

import argparse

from introsect.attack import CONVERGED, HOP_NAMES
from introsect.harness import ExperimentConfig, run_attack, spearman
from introsect.observer import PseudonymKey


def evaluate(cfg, seeds, key):
    full, trials, weights, leaks = 0, [], [], 0
    for s in seeds:
        run = run_attack(cfg.with_overrides(seed=s), key)
        full += run.reconstructed
        for r in run.results:
            if r.status == CONVERGED:
                trials.append(r.trials)
                weights.append(run.weights[HOP_NAMES[r.stage]])
        m = run_attack(cfg.with_overrides(seed=s, **{"scenario.mitigation_interval": 600.0}), key)
        leaks += any(r.status == CONVERGED and r.stage >= 2 for r in m.results)
    return full, trials, spearman(weights, trials), leaks


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--intensities", default="2,3,4")
    ap.add_argument("--sigmas", default="0.5,1.0")
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    key = PseudonymKey.generate()
    seeds = range(args.seeds)
    for sigma in (float(x) for x in args.sigmas.split(",")):
        for lam in (float(x) for x in args.intensities.split(",")):
            cfg = ExperimentConfig().with_overrides(**{"network.intensity": lam, "network.weight_sigma": sigma})
            full, trials, rho, leaks = evaluate(cfg, seeds, key)
            print(f"sigma={sigma} lambda={lam}: {full}/{len(seeds)} full, trials "
                  f"{min(trials)}..{max(trials)}, rho={rho:.2f}, mitigated stage>=2 hits {leaks}")


if __name__ == "__main__":
    main()
