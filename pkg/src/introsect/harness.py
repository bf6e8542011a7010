"""Experiment configuration, world construction, reports and sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import random
import statistics
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attack import (CONVERGED, HOP_NAMES, AttackConfig, AttackContext, run_full_attack)
from .directory import (RelaySnapshot, load_snapshot, set_address, set_weight, synthetic_snapshot)
from .observer import Observer, PseudonymKey
from .pathsel import INTRO_SPEC, Circuit, CircuitPopulation, _fill, samplers
from .protocol import AttackClient, OnionNetwork, OnionService
from .simcore import DEFAULT_DIURNAL_PROFILE, Simulator, diurnal_intensity, hour_of_day

DAY = 86400.0
SERVICE_ADDRESS = "203.0.113.10"
CLIENT_ADDRESS = "198.51.100.99"
ONION = "introsecttargetservice.onion"
# the service's intro circuit exists a little before the first trial
INTRO_LEAD = 60.0
SWEEP_AXES = ("time_of_day", "consensus_weight", "intensity", "mitigation_interval")
TRACE_HEADER = ("stage", "trial", "anonymity_set_size", "intersection_size", "status", "virtual_time")
TRIALS_HEADER = ("node", "stage", "trials", "consensus_weight", "status")


class ConfigError(ValueError):
    pass


@dataclass
class NetworkConfig:
    relay_count: int = 300
    weight_sigma: float = 0.5       # log-normal spread of synthetic consensus weights
    circuit_population: int = 3000
    intensity: float = 4.0          # flows per second per circuit hop, before diurnal scaling
    diurnal_profile: dict = field(default_factory=lambda: dict(DEFAULT_DIURNAL_PROFILE))
    circuit_lifetime: float = 600.0
    persistent_fraction: float = 0.05
    persistent_clients: int = 300
    tick: float = 0.25
    latency: tuple = (0.020, 0.150)
    delta_envelope: tuple = (0.5, 1.5)
    handshake_timeout: float = 10.0
    auxiliary_flows: bool = False


@dataclass
class ScenarioConfig:
    time_of_day: float = 10.0
    consensus_fixture: str | None = None
    colocate: bool = False
    mitigation_interval: float | None = None
    planted: dict | None = None       # {"EG": id, "M0": id, "M1": id, "IP": id}
    hop_weights: dict | None = None   # {"EG": 9300, ...} consensus weight overrides


@dataclass
class OutputConfig:
    report_dir: str = "reports"


@dataclass
class ExperimentConfig:
    seed: int = 0
    network: NetworkConfig = field(default_factory=NetworkConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        n, s = self.network, self.scenario
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed: must be a 64-bit nonnegative integer")
        if n.relay_count < 8:
            raise ConfigError("network.relay_count: must be >= 8")
        if n.circuit_population < 0:
            raise ConfigError("network.circuit_population: must be >= 0")
        if n.weight_sigma < 0:
            raise ConfigError("network.weight_sigma: must be >= 0")
        if n.intensity < 0:
            raise ConfigError("network.intensity: must be >= 0")
        for name in ("circuit_lifetime", "tick", "handshake_timeout"):
            if not getattr(n, name) > 0:
                raise ConfigError(f"network.{name}: must be > 0")
        lo, hi = n.delta_envelope
        if not 0 < lo <= hi:
            raise ConfigError("network.delta_envelope: need 0 < lo <= hi")
        lo, hi = n.latency
        if not 0 < lo <= hi:
            raise ConfigError("network.latency: need 0 < lo <= hi")
        if not 0 <= n.persistent_fraction <= 1:
            raise ConfigError("network.persistent_fraction: must be in [0, 1]")
        if not 0 <= s.time_of_day < 24:
            raise ConfigError("scenario.time_of_day: must be in [0, 24)")
        if s.mitigation_interval is not None and not s.mitigation_interval > 0:
            raise ConfigError("scenario.mitigation_interval: must be > 0")
        for part in (s.planted or {}, s.hop_weights or {}):
            for label in part:
                if label not in HOP_NAMES.values():
                    raise ConfigError(f"scenario: unknown hop label {label!r}")

    # -- (de)serialisation --------------------------------------------------

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        parts = {"network": NetworkConfig, "attack": AttackConfig,
                 "scenario": ScenarioConfig, "outputs": OutputConfig}
        kwargs = {}
        for key, value in data.items():
            if key == "seed":
                kwargs["seed"] = value
            elif key in parts:
                kwargs[key] = _build(parts[key], value, key)
            else:
                raise ConfigError(f"{key}: unknown config field")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **dotted) -> "ExperimentConfig":
        """Copy with ``"section.field"`` (or ``seed``) keys replaced."""
        data = self.to_dict()
        for key, value in dotted.items():
            node = data
            *path, last = key.split(".")
            for p in path:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"{key}: unknown config field")
                node = node[p]
            if last not in node:
                raise ConfigError(f"{key}: unknown config field")
            node[last] = value
        return ExperimentConfig.from_dict(data)


def _build(cls, value, prefix: str):
    if not isinstance(value, dict):
        raise ConfigError(f"{prefix}: must be an object")
    known = {f.name: f for f in fields(cls)}
    for k in value:
        if k not in known:
            raise ConfigError(f"{prefix}.{k}: unknown config field")
    vals = dict(value)
    for k in ("latency", "delta_envelope"):
        if k in vals and isinstance(vals[k], list):
            vals[k] = tuple(vals[k])
    if "diurnal_profile" in vals:
        vals["diurnal_profile"] = {float(h): float(m) for h, m in vals["diurnal_profile"].items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


# -- world ---------------------------------------------------------------------

def streams(seed: int) -> dict:
    """Independent named RNG streams for one run."""
    names = ("plant", "population", "background", "protocol", "mitigation")
    return {n: random.Random(f"{seed}:{n}") for n in names}


@dataclass
class World:
    config: ExperimentConfig
    snapshot: RelaySnapshot
    sim: Simulator
    network: OnionNetwork
    observer: Observer
    service: OnionService
    intro: Circuit          # as planted; the live one may be rebuilt
    ctx: AttackContext
    planted: dict           # hop label -> relay id

    def weight(self, label: str) -> int:
        return self.snapshot[self.planted[label]].consensus_weight


def _plant(snapshot: RelaySnapshot, scenario: ScenarioConfig, rng: random.Random) -> dict:
    hops = _fill(snapshot, INTRO_SPEC.role_pattern, rng, None)
    planted = dict(zip(("EG", "M0", "M1", "IP"), hops))
    for label, rid in (scenario.planted or {}).items():
        if rid not in snapshot:
            raise ConfigError(f"scenario.planted.{label}: unknown relay {rid!r}")
        planted[label] = rid
    if len(set(planted.values())) != 4:
        raise ConfigError("scenario.planted: hops must be distinct relays")
    return planted


def build_world(config: ExperimentConfig, key: PseudonymKey | None = None) -> World:
    n, s = config.network, config.scenario
    rngs = streams(config.seed)
    if s.consensus_fixture:
        snapshot = load_snapshot(s.consensus_fixture)
    else:
        snapshot = synthetic_snapshot(n.relay_count, seed=config.seed, weight_sigma=n.weight_sigma)
    planted = _plant(snapshot, s, rngs["plant"])
    for label, w in sorted((s.hop_weights or {}).items()):
        snapshot = set_weight(snapshot, planted[label], int(w))
    if s.colocate:
        snapshot = set_address(snapshot, planted["M0"], snapshot[planted["M1"]].address)
    samplers(snapshot)

    t0 = DAY + s.time_of_day * 3600.0 - INTRO_LEAD
    sim = Simulator(t0)
    ids = itertools.count()
    population = None
    if n.circuit_population:
        population = CircuitPopulation(snapshot, n.circuit_population, rngs["population"], now=t0,
                                       lifetime=n.circuit_lifetime,
                                       persistent_fraction=n.persistent_fraction,
                                       persistent_clients=n.persistent_clients, ids=ids)
    observer = Observer(key or PseudonymKey.generate(), lambda: sim.now)
    base, profile = n.intensity, dict(n.diurnal_profile)

    def intensity(t):
        return diurnal_intensity(base, hour_of_day(t), profile)

    net = OnionNetwork(snapshot, sim, rngs["protocol"], population=population,
                       background_rng=rngs["background"], intensity=intensity, observer=observer,
                       latency=tuple(n.latency), delta_envelope=tuple(n.delta_envelope), tick=n.tick,
                       auxiliary_flows=n.auxiliary_flows, timeout=n.handshake_timeout, ids=ids,
                       mitigation_rng=rngs["mitigation"])
    service = OnionService(ONION, SERVICE_ADDRESS)
    hops = tuple(planted[h] for h in ("EG", "M0", "M1", "IP"))
    life = INTRO_SPEC.sample_lifetime(rngs["plant"])
    intro = Circuit(next(ids), hops, INTRO_SPEC, t0, t0 + life, SERVICE_ADDRESS)
    net.establish_intro(service, intro)
    if s.mitigation_interval is not None:
        net.schedule_rebuilds(ONION, planted["IP"], s.mitigation_interval)
    sim.run_until(t0 + INTRO_LEAD)

    by_pseudonym = {}

    def truth(k):
        path = net.true_path(ONION, planted["IP"])
        return observer.pseudonym(net.address(path[k]))

    def grant_tap(p):
        # prefer the relay that actually holds the identified position; matters
        # only when two relays share an address
        for rid in net.true_path(ONION, planted["IP"])[:4]:
            if observer.pseudonym(net.address(rid)) == p:
                return rid
        if not by_pseudonym:
            for r in snapshot:
                by_pseudonym.setdefault(observer.pseudonym(r.address), r.id)
        return by_pseudonym.get(p)

    ctx = AttackContext(sim, net, observer, AttackClient(CLIENT_ADDRESS), ONION, planted["IP"],
                        truth, grant_tap, deadline=intro.expires_at)
    return World(config, snapshot, sim, net, observer, service, intro, ctx, planted)


# -- runs ----------------------------------------------------------------------

@dataclass
class AttackRun:
    config: ExperimentConfig
    results: list
    planted: dict
    weights: dict           # hop label -> consensus weight
    rebuilds: int
    duration: float

    @property
    def reconstructed(self) -> bool:
        return (len(self.results) == self.config.attack.stages
                and all(r.status == CONVERGED for r in self.results))

    def stage_rows(self) -> list:
        """One row per hop in circuit order EG, M0, M1, IP."""
        by_stage = {r.stage: r for r in self.results}
        rows = []
        for k in (4, 3, 2, 1):
            label = HOP_NAMES[k]
            r = by_stage.get(k)
            rows.append({"node": label, "stage": k,
                         "trials": "" if r is None else r.trials,
                         "consensus_weight": self.weights[label],
                         "status": "not_run" if r is None else r.status})
        return rows


def run_attack(config: ExperimentConfig, key: PseudonymKey | None = None) -> AttackRun:
    world = build_world(config, key)
    start = world.sim.now
    results = run_full_attack(world.ctx, config.attack)
    weights = {h: world.weight(h) for h in world.planted}
    return AttackRun(config, results, world.planted, weights, world.network.rebuilds,
                     world.sim.now - start)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def trials_csv(run: AttackRun) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, TRIALS_HEADER, lineterminator="\n")
    w.writeheader()
    w.writerows(run.stage_rows())
    return buf.getvalue()


def trace_csv(run: AttackRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for r in run.results:
        for t in r.trace:
            w.writerow([t.stage, t.trial, t.set_size, t.intersection_size, t.status, _fmt(t.virtual_time)])
    return buf.getvalue()


def summary(run: AttackRun) -> dict:
    return {
        "seed": run.config.seed,
        "reconstructed": run.reconstructed,
        "stages": [{"stage": r.stage, "node": HOP_NAMES[r.stage], "status": r.status,
                    "trials": r.trials, "trials_to_convergence": r.trials_to_convergence,
                    "failed_trials": r.failed_trials, "reason": r.reason,
                    "elapsed_virtual_time": round(r.elapsed_virtual_time, 6)} for r in run.results],
        "weights": run.weights,
        "rebuilds": run.rebuilds,
        "virtual_duration": round(run.duration, 6),
        "config": run.config.to_dict(),
    }


def run_experiment(config: ExperimentConfig, out_dir=None, key: PseudonymKey | None = None) -> dict:
    """Run one attack and write ``trials_per_hop.csv``, ``trace.csv`` and ``summary.json``."""
    run = run_attack(config, key)
    out = Path(out_dir if out_dir is not None else config.outputs.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "trials_per_hop.csv": trials_csv(run),
        "trace.csv": trace_csv(run),
        "summary.json": json.dumps(summary(run), indent=2, sort_keys=True) + "\n",
    }
    for name, text in files.items():
        (out / name).write_text(text)
    return {"run": run, "files": {name: out / name for name in files}}


# -- sweeps --------------------------------------------------------------------

def _apply_axis(config: ExperimentConfig, axis: str, value, seed: int) -> ExperimentConfig:
    if axis == "time_of_day":
        return config.with_overrides(seed=seed, **{"scenario.time_of_day": float(value)})
    if axis == "intensity":
        return config.with_overrides(seed=seed, **{"network.intensity": float(value)})
    if axis == "mitigation_interval":
        v = None if value is None or math.isinf(float(value)) else float(value)
        return config.with_overrides(seed=seed, **{"scenario.mitigation_interval": v})
    if axis == "consensus_weight":
        weights = dict(config.scenario.hop_weights or {})
        weights["EG"] = int(value)
        return config.with_overrides(seed=seed, **{"scenario.hop_weights": weights})
    raise ConfigError(f"axis: must be one of {', '.join(SWEEP_AXES)}")


def _sweep_one(args):
    config, axis, value, seed = args
    return value, seed, run_attack(_apply_axis(config, axis, value, seed))


def spearman(xs, ys) -> float:
    from scipy.stats import spearmanr

    if len(xs) < 3 or len(set(xs)) < 2 or len(set(ys)) < 2:
        return float("nan")
    return float(spearmanr(xs, ys).statistic)


def run_sweep(config: ExperimentConfig, axis: str, values, seeds, workers: int = 1) -> dict:
    """Run every (value, seed) pair; report per-stage trials, medians and rank correlation."""
    values = list(values)
    if not values:
        raise ConfigError("values: sweep needs at least one value")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"axis: must be one of {', '.join(SWEEP_AXES)}")
    jobs = [(config, axis, v, s) for v in values for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_sweep_one, jobs))
    else:
        done = [_sweep_one(j) for j in jobs]

    rows = []
    for value, seed, run in done:
        for row in run.stage_rows():
            rows.append({"axis": axis, "value": value, "seed": seed, **row})
    medians = {}
    for v in values:
        mine = [r for r in rows if r["value"] == v]
        per_stage = {}
        for k in (1, 2, 3, 4):
            ts = [r["trials"] for r in mine if r["stage"] == k and r["status"] == CONVERGED]
            per_stage[k] = statistics.median(ts) if ts else None
        totals = [sum(r["trials"] for r in mine if r["seed"] == s and r["trials"] != "") for s in seeds]
        medians[v] = {"per_stage": per_stage, "total": statistics.median(totals)}
    conv = [r for r in rows if r["status"] == CONVERGED]
    return {
        "axis": axis,
        "values": values,
        "seeds": list(seeds),
        "rows": rows,
        "medians": medians,
        "spearman_trials_vs_weight": spearman([r["consensus_weight"] for r in conv],
                                              [r["trials"] for r in conv]),
        "runs": [run for _, _, run in done],
    }


def sweep_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ("axis", "value", "seed", *TRIALS_HEADER), lineterminator="\n")
    w.writeheader()
    w.writerows(report["rows"])
    return buf.getvalue()


def write_sweep(report: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(sweep_csv(report))
    agg = {"axis": report["axis"], "values": report["values"], "seeds": report["seeds"],
           "medians": {str(v): m for v, m in report["medians"].items()},
           "spearman_trials_vs_weight": report["spearman_trials_vs_weight"]}
    (out / "sweep_summary.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n")
    return {"sweep.csv": out / "sweep.csv", "sweep_summary.json": out / "sweep_summary.json"}


# -- trace validation ------------------------------------------------------------

def validate_trace(text: str) -> list:
    """Check a ``trace.csv`` against the per-stage invariants.

    Returns ``(property, line, detail)`` tuples; empty when the trace is clean.
    """
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and set(TRACE_HEADER) - set(rows[0]):
        return [("schema", 1, f"missing columns {sorted(set(TRACE_HEADER) - set(rows[0]))}")]
    bad = []
    prev = {}
    last_trial = {}
    for line, row in enumerate(rows, start=2):
        try:
            k, t = int(row["stage"]), int(row["trial"])
            a, i = int(row["anonymity_set_size"]), int(row["intersection_size"])
        except (TypeError, ValueError):
            bad.append(("schema", line, "non-integer field"))
            continue
        status = row["status"]
        if t <= last_trial.get(k, 0):
            bad.append(("trial_order", line, f"trial {t} after {last_trial[k]}"))
        last_trial[k] = t
        if status == "failed_trial":
            continue
        if i > a:
            bad.append(("intersection_within_set", line, f"|I|={i} > |A|={a}"))
        if k in prev and i > prev[k]:
            bad.append(("monotone_shrinkage", line, f"|I| grew {prev[k]} -> {i}"))
        prev[k] = i
        expect = CONVERGED if i == 1 else ("empty_failure" if i == 0 else None)
        if expect is not None and status not in (expect, "misidentified"):
            bad.append(("status_consistency", line, f"|I|={i} but status {status}"))
        if expect is None and status != "running":
            bad.append(("status_consistency", line, f"|I|={i} but status {status}"))
    return bad
