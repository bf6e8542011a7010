"""Hop-by-hop intersection attack on a service's introduction circuit.

Stage ``k`` taps the k-th relay counted from the introduction point and
intersects the destination sets captured during successive handshake windows
until one pseudonym is left. Ground truth is reached only through
:class:`AttackContext.truth`, a channel the intersection logic never reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

from .observer import AnonymitySet, ObserverUsageError, Pseudonym

RUNNING = "running"
CONVERGED = "converged"
EMPTY_FAILURE = "empty_failure"
BUDGET_EXHAUSTED = "budget_exhausted"
# a singleton that fails ground-truth validation (only possible when the
# circuit changes under the attack, e.g. with the rebuild mitigation)
MISIDENTIFIED = "misidentified"
STATUSES = (RUNNING, CONVERGED, EMPTY_FAILURE, BUDGET_EXHAUSTED, MISIDENTIFIED)

HOP_NAMES = {1: "IP", 2: "M1", 3: "M0", 4: "EG"}


@dataclass(frozen=True)
class IntersectionState:
    stage: int
    trials_done: int = 0
    current: frozenset | None = None  # None until the first set arrives
    excluded: frozenset = frozenset()
    status: str = RUNNING

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def identified(self) -> Pseudonym | None:
        if self.status == CONVERGED:
            return next(iter(self.current))
        return None

    @property
    def size(self) -> int | None:
        return None if self.current is None else len(self.current)


def intersect_step(state: IntersectionState, a: AnonymitySet) -> IntersectionState:
    """Fold one anonymity set into the running intersection."""
    if a.stage != state.stage:
        raise ObserverUsageError(f"set for stage {a.stage} fed to stage {state.stage}")
    if state.status != RUNNING:
        raise ObserverUsageError(f"stage {state.stage} already finished ({state.status})")
    fresh = a.members - state.excluded
    current = frozenset(fresh) if state.current is None else state.current & fresh
    if len(current) == 1:
        status = CONVERGED
    elif not current:
        status = EMPTY_FAILURE
    else:
        status = RUNNING
    return replace(state, trials_done=state.trials_done + 1, current=current, status=status)


@dataclass(frozen=True)
class TrialRecord:
    stage: int
    trial: int
    set_size: int
    intersection_size: int
    status: str
    virtual_time: float


@dataclass
class StageResult:
    stage: int
    trials_to_convergence: int | None
    identified: Pseudonym | None
    status: str
    elapsed_virtual_time: float
    monitored: str = ""
    trials: int = 0
    failed_trials: int = 0
    reason: str = ""
    candidate: Pseudonym | None = None  # the rejected singleton when misidentified
    trace: list = field(default_factory=list)
    # out-of-band (successor in A_t, successor in I_t) per trial; never reported
    validation: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if (self.identified is not None) != (self.status == CONVERGED):
            raise ValueError("identified must be set exactly when converged")


@dataclass
class AttackConfig:
    inter_trial_delay: float = 30.0
    trial_budget: int = 500
    stages: int = 4
    mitigation_rebuild_interval: float | None = None
    max_failed_trials: int = 50

    def __post_init__(self):
        if not self.inter_trial_delay > 0:
            raise ValueError("inter_trial_delay must be > 0")
        if self.trial_budget < 1:
            raise ValueError("trial_budget must be >= 1")
        if not 1 <= self.stages <= 4:
            raise ValueError("stages must be between 1 and 4")
        if self.mitigation_rebuild_interval is not None and not self.mitigation_rebuild_interval > 0:
            raise ValueError("mitigation_rebuild_interval must be > 0")
        if self.max_failed_trials < 0:
            raise ValueError("max_failed_trials must be >= 0")


@dataclass
class AttackContext:
    """Handles the attack runs against.

    ``truth(stage)`` returns the current successor's pseudonym and
    ``grant_tap(pseudonym)`` the relay id to monitor next; both stand in for
    the out-of-band channel and are not consulted by the intersection itself.
    """
    sim: object
    network: object
    observer: object
    client: object
    onion: str
    intro_point: str
    truth: Callable[[int], Pseudonym]
    grant_tap: Callable[[Pseudonym], str | None]
    deadline: float = math.inf


def run_stage(k: int, monitored: str, config: AttackConfig, ctx: AttackContext,
              excluded: frozenset = frozenset()) -> StageResult:
    """Repeat handshake trials with a tap on ``monitored`` until the stage ends."""
    sim, net, obs = ctx.sim, ctx.network, ctx.observer
    t0 = sim.now
    state = IntersectionState(k, excluded=frozenset(excluded))
    trace, validation = [], []
    failed = 0
    reason = ""
    final = None

    while True:
        if state.trials_done >= config.trial_budget:
            final, reason = BUDGET_EXHAUSTED, "trial_budget"
            break
        if failed > config.max_failed_trials:
            final, reason = BUDGET_EXHAUSTED, "failed_trials"
            break
        if sim.now >= ctx.deadline:
            final, reason = BUDGET_EXHAUSTED, "circuit_lifetime"
            break
        trial = state.trials_done + 1
        box = {}

        def start():
            box["h"] = obs.start_window(monitored, k, trial)
            net.monitor(monitored)

        def stop():
            box["a"] = obs.stop_window(box["h"])

        tr = net.client_connect(ctx.client, ctx.onion, on_introduce1=start, on_rendezvous2=stop)
        a = box.get("a")
        if not tr.success or a is None or a.failed:
            if "h" in box and a is None:
                obs.abort_window(box["h"])
            failed += 1
            trace.append(TrialRecord(k, trial, 0 if a is None else len(a), state.size or 0,
                                     "failed_trial", sim.now))
            sim.run_until(sim.now + config.inter_trial_delay)
            continue

        truth = ctx.truth(k)
        state = intersect_step(state, a)
        validation.append((truth in a.members, truth in state.current))
        trace.append(TrialRecord(k, trial, len(a), len(state.current), state.status, sim.now))
        if state.status != RUNNING:
            break
        sim.run_until(sim.now + config.inter_trial_delay)

    elapsed = sim.now - t0
    n = state.trials_done
    if final is not None:
        return StageResult(k, None, None, final, elapsed, monitored, n, failed, reason,
                           trace=trace, validation=validation)
    if state.status == EMPTY_FAILURE:
        return StageResult(k, None, None, EMPTY_FAILURE, elapsed, monitored, n, failed,
                           "intersection emptied", trace=trace, validation=validation)
    candidate = state.identified
    if candidate != ctx.truth(k):
        return StageResult(k, None, None, MISIDENTIFIED, elapsed, monitored, n, failed,
                           "singleton failed validation", candidate, trace, validation)
    return StageResult(k, n, candidate, CONVERGED, elapsed, monitored, n, failed,
                       trace=trace, validation=validation)


def run_full_attack(ctx: AttackContext, config: AttackConfig) -> list:
    """Stages IP -> M1 -> M0 -> EG; stops at the first stage that does not converge."""
    excluded = {ctx.observer.pseudonym(ctx.network.address(ctx.intro_point))}
    monitored = ctx.intro_point
    results = []
    for k in range(1, config.stages + 1):
        res = run_stage(k, monitored, config, ctx, frozenset(excluded))
        results.append(res)
        if res.status != CONVERGED:
            break
        excluded.add(res.identified)
        if k < config.stages:
            nxt = ctx.grant_tap(res.identified)
            if nxt is None:
                # successor is not a relay; nothing further to tap
                break
            monitored = nxt
            ctx.sim.run_until(ctx.sim.now + config.inter_trial_delay)
    return results


def rebuild_overhead(interval: float, duration: float = 24 * 3600.0) -> int:
    """Internal-circuit builds per introduction point over ``duration``."""
    if not interval > 0:
        raise ValueError("interval must be > 0")
    if math.isinf(interval):
        return 0
    return int(math.floor(duration / interval + 1e-9))


def evaluate_mitigation(rebuild_interval: float, config, seeds) -> dict:
    """Paired mitigated/unmitigated runs on identical seeds.

    ``config`` is an :class:`~introsect.harness.ExperimentConfig`.
    """
    from .harness import run_attack

    if not rebuild_interval > 0:
        raise ValueError("rebuild_interval must be > 0")
    interval = None if math.isinf(rebuild_interval) else float(rebuild_interval)
    stages = config.attack.stages
    rows = []
    for seed in seeds:
        pair = {}
        for label, iv in (("baseline", None), ("mitigated", interval)):
            cfg = config.with_overrides(seed=seed, **{"scenario.mitigation_interval": iv})
            run = run_attack(cfg)
            pair[label] = {
                "statuses": [r.status for r in run.results],
                "trials": [r.trials for r in run.results],
                "converged": [r.status == CONVERGED for r in run.results],
                "misidentified": sum(r.status == MISIDENTIFIED for r in run.results),
                "rebuilds": run.rebuilds,
            }
        rows.append({"seed": seed, **pair})

    def rate(label, k):
        hits = sum(1 for r in rows if len(r[label]["converged"]) >= k and r[label]["converged"][k - 1])
        return hits / len(rows) if rows else 0.0

    return {
        "rebuild_interval": rebuild_interval,
        "seeds": list(seeds),
        "runs": rows,
        "convergence_rate": {label: {k: rate(label, k) for k in range(1, stages + 1)}
                             for label in ("baseline", "mitigated")},
        "builds_per_hour": 0.0 if interval is None else 3600.0 / interval,
        "builds_per_day": rebuild_overhead(rebuild_interval),
    }
