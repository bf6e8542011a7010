"""Command-line entry point: ``simulate``, ``sweep``, ``concentration``, ``validate``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from .concentration import concentration_report, emit_distribution_report, jurisdiction
from .directory import ConsensusParseError, load_snapshot
from .harness import (ConfigError, ExperimentConfig, SWEEP_AXES, load_config, run_experiment,
                      run_sweep, validate_trace, write_sweep)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="introsect", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one full attack and write reports")
    s.add_argument("--config", help="JSON experiment config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="report directory")
    s.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. network.intensity=2 (value is JSON)")

    w = sub.add_parser("sweep", help="vary one factor over several seeds")
    w.add_argument("--config")
    w.add_argument("--axis", required=True, choices=SWEEP_AXES)
    w.add_argument("--values", required=True, help="comma-separated; 'inf' allowed")
    w.add_argument("--seeds", type=int, default=10, help="seeds 0..N-1")
    w.add_argument("--seed", type=int, default=0, help="first seed")
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", required=True)
    w.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")

    c = sub.add_parser("concentration", help="jurisdiction mass of a relay snapshot")
    c.add_argument("--snapshot", required=True)
    c.add_argument("--set", action="append", dest="sets", metavar="NAME",
                   help="five_eyes, nine_eyes, fourteen_eyes or comma-separated codes")
    c.add_argument("--out", help="write the per-country CSV here")

    v = sub.add_parser("validate", help="check a recorded trace.csv")
    v.add_argument("--trace", required=True)
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    for item in args.param:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--param {item!r}: expected KEY=VALUE")
        try:
            over[key] = json.loads(raw)
        except json.JSONDecodeError:
            over[key] = raw
    if getattr(args, "seed", None) is not None and args.command == "simulate":
        over["seed"] = args.seed
    return cfg.with_overrides(**over) if over else cfg


def _values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok:
            v = float(tok)
            out.append(int(v) if v.is_integer() and not math.isinf(v) else v)
    return out


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _config(args)
            out = run_experiment(cfg, args.out)
            run = out["run"]
            trials = ",".join(str(r.trials) for r in run.results)
            print(f"seed={cfg.seed} reconstructed={run.reconstructed} trials={trials} "
                  f"report={Path(out['files']['trials_per_hop.csv']).parent}")
            return 0
        if args.command == "sweep":
            cfg = _config(args)
            rep = run_sweep(cfg, args.axis, _values(args.values),
                            range(args.seed, args.seed + args.seeds), workers=args.workers)
            write_sweep(rep, args.out)
            for v, m in rep["medians"].items():
                print(f"{args.axis}={v} median_total={m['total']} per_stage={m['per_stage']}")
            print(f"spearman_trials_vs_weight={rep['spearman_trials_vs_weight']:.4f}")
            return 0
        if args.command == "concentration":
            snap = load_snapshot(args.snapshot)
            sets = [jurisdiction(s) for s in (args.sets or ["fourteen_eyes"])]
            if args.out:
                Path(args.out).write_text(emit_distribution_report(snap, sets))
            print("set,p_guard,p_middle,p_all_hops_intro")
            for s in sets:
                r = concentration_report(snap, s)
                print(f"{r.set_name},{r.p_guard:.6f},{r.p_middle:.6f},{r.p_all_hops_intro:.6f}")
            return 0
        if args.command == "validate":
            problems = validate_trace(Path(args.trace).read_text())
            if problems:
                prop, line, detail = problems[0]
                print(f"invalid trace: {prop} violated at line {line} ({detail}); "
                      f"{len(problems)} violation(s)", file=sys.stderr)
                return 1
            print("trace ok")
            return 0
    except ConfigError as exc:
        print(f"introsect: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ConsensusParseError, ValueError) as exc:
        print(f"introsect: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
