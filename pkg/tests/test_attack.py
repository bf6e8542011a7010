import math
import random

import pytest
from hypothesis import given, strategies as st

from introsect.attack import (BUDGET_EXHAUSTED, CONVERGED, EMPTY_FAILURE, RUNNING, AttackConfig,
                              IntersectionState, StageResult, evaluate_mitigation, intersect_step,
                              rebuild_overhead, run_full_attack, run_stage)
from introsect.directory import GUARD, MIDDLE, Relay, RelaySnapshot, with_weight_probabilities
from introsect.harness import ExperimentConfig, build_world
from introsect.observer import AnonymitySet, ObserverUsageError
from introsect.pathsel import INTRO_SPEC, Circuit, rebuild_internal, samplers


def aset(members, stage=1, trial=1):
    return AnonymitySet(stage, trial, frozenset(members), (0.0, 1.0))


def test_intersection_examples():
    s = intersect_step(IntersectionState(1), aset("abc"))
    s = intersect_step(s, aset("bcd", trial=2))
    assert s.current == {"b", "c"} and s.status == RUNNING
    s = intersect_step(IntersectionState(1, 1, frozenset("a")), aset("az", trial=2))
    assert s.status == CONVERGED and s.identified == "a"


def test_excluded_successor_empties_stage():
    s = intersect_step(IntersectionState(2, excluded=frozenset("p")), aset("p", stage=2))
    assert s.current == frozenset() and s.status == EMPTY_FAILURE and s.identified is None


def test_intersection_usage_errors():
    with pytest.raises(ObserverUsageError):
        intersect_step(IntersectionState(2), aset("a", stage=1))
    done = intersect_step(IntersectionState(1), aset("a"))
    with pytest.raises(ObserverUsageError):
        intersect_step(done, aset("a", trial=2))


universe = st.frozensets(st.integers(0, 12), min_size=1, max_size=12)


@given(st.lists(universe, min_size=1, max_size=25), st.frozensets(st.integers(0, 12), max_size=4))
def test_monotone_shrinkage_and_exclusion(sets, excluded):
    s = IntersectionState(1, excluded=excluded)
    prev = None
    for t, members in enumerate(sets, start=1):
        s = intersect_step(s, aset(members, trial=t))
        assert not (s.current & excluded)
        if prev is not None:
            assert s.current <= prev and len(s.current) <= len(prev)
        assert (s.status == CONVERGED) == (len(s.current) == 1)
        assert (s.status == EMPTY_FAILURE) == (not s.current)
        prev = s.current
        if s.status != RUNNING:
            break


def test_stage_result_identified_iff_converged():
    StageResult(1, 3, b"x", CONVERGED, 10.0)
    with pytest.raises(ValueError):
        StageResult(1, None, b"x", EMPTY_FAILURE, 10.0)
    with pytest.raises(ValueError):
        StageResult(1, 3, None, CONVERGED, 10.0)


@pytest.mark.parametrize("kw", [{"inter_trial_delay": 0}, {"trial_budget": 0}, {"stages": 5},
                                {"mitigation_rebuild_interval": -1.0}])
def test_attack_config_validation(kw):
    with pytest.raises(ValueError):
        AttackConfig(**kw)


def test_rebuild_overhead():
    assert rebuild_overhead(600.0) == 144
    assert rebuild_overhead(300.0, 3600.0) == 12
    assert rebuild_overhead(math.inf) == 0
    with pytest.raises(ValueError):
        rebuild_overhead(0.0)


def noiseless(seed=0, **over):
    return ExperimentConfig(seed=seed).with_overrides(**{"network.intensity": 0.0, **over})


def test_noiseless_attack_reconstructs_circuit(key):
    w = build_world(noiseless(4), key)
    res = run_full_attack(w.ctx, w.config.attack)
    assert [r.status for r in res] == [CONVERGED] * 4
    assert [r.trials_to_convergence for r in res] == [1, 1, 1, 1]
    path = [w.planted[h] for h in ("IP", "M1", "M0", "EG")]
    assert [r.monitored for r in res] == path
    want = [w.observer.pseudonym(w.snapshot[r].address) for r in path[1:]]
    want.append(w.observer.pseudonym(w.service.address))
    assert [r.identified for r in res] == want


def test_noisy_attack_is_sound(key):
    w = build_world(ExperimentConfig(seed=2), key)
    res = run_full_attack(w.ctx, w.config.attack)
    assert [r.status for r in res] == [CONVERGED] * 4
    for r in res:
        assert all(in_a and in_i for in_a, in_i in r.validation)
        sizes = [t.intersection_size for t in r.trace]
        assert sizes == sorted(sizes, reverse=True) and sizes[-1] == 1
        assert 1 <= r.trials <= 500


def test_colocated_m1_m0_stops_attack(key):
    w = build_world(noiseless(1, **{"scenario.colocate": True}), key)
    res = run_full_attack(w.ctx, w.config.attack)
    assert [r.status for r in res] == [CONVERGED, EMPTY_FAILURE]
    assert res[1].monitored == w.planted["M1"] and res[1].trials == 1


def test_untapped_relay_exhausts_budget(key):
    w = build_world(noiseless(3), key)
    off_path = next(r.id for r in w.snapshot if r.id not in w.planted.values())
    cfg = AttackConfig(trial_budget=5, max_failed_trials=3)
    r = run_stage(1, off_path, cfg, w.ctx)
    assert r.status == BUDGET_EXHAUSTED and r.identified is None and r.failed_trials == 4


def test_budget_cap(key):
    w = build_world(ExperimentConfig(seed=2), key)
    r = run_stage(1, w.planted["IP"], AttackConfig(trial_budget=2), w.ctx)
    assert r.status == BUDGET_EXHAUSTED and r.trials == 2 and r.reason == "trial_budget"


def test_circuit_lifetime_guard(key):
    w = build_world(ExperimentConfig(seed=2), key)
    w.ctx.deadline = w.sim.now + 100.0
    r = run_stage(1, w.planted["IP"], AttackConfig(), w.ctx)
    assert r.status == BUDGET_EXHAUSTED and r.reason == "circuit_lifetime"
    assert r.trials <= 4


def toy_snapshot():
    relays = [Relay(f"T{i}", f"10.9.0.{i}", "DE", w, frozenset({"Guard"} if i % 2 else set()))
              for i, w in enumerate([5, 9, 3, 7, 1, 4, 8, 2, 6, 10])]
    return RelaySnapshot(with_weight_probabilities(relays))


def m1_probability(snap, ip, x):
    """Exact P(M1 = x) for sequential distinct draws EG (guard), M0, M1 (middle) behind ``ip``."""
    g = samplers(snap)[GUARD].prob
    m = samplers(snap)[MIDDLE].prob
    total = 0.0
    for eg in g:
        if eg == ip:
            continue
        p_eg = g[eg] / (1 - g.get(ip, 0.0))
        for m0 in m:
            if m0 in (ip, eg):
                continue
            p_m0 = m[m0] / (1 - m[ip] - m[eg])
            if x in (ip, eg, m0):
                continue
            total += p_eg * p_m0 * m[x] / (1 - m[ip] - m[eg] - m[m0])
    return total


def test_rebuild_survival_matches_analytic_oracle():
    snap = toy_snapshot()
    ip, x = "T2", "T9"
    p = m1_probability(snap, ip, x)
    base = Circuit(0, ("T1", "T0", "T3", ip), INTRO_SPEC, 0.0, 1e9, "hs")
    rng = random.Random(17)
    T, reps = 2, 40000
    survived = 0
    for _ in range(reps):
        s = IntersectionState(1)
        for t in range(1, T + 1):
            c = rebuild_internal(base, snap, rng, now=0.0, circuit_id=t)
            # two fixed sentinels keep the stage running
            s = intersect_step(s, aset({snap[c.hops[2]].address, "s1", "s2"}, trial=t))
        survived += snap[x].address in s.current
    expect = p ** T
    se = math.sqrt(expect * (1 - expect) / reps)
    assert abs(survived / reps - expect) < 4 * se


def small_config():
    return ExperimentConfig().with_overrides(**{"network.relay_count": 80,
                                                "network.circuit_population": 600})


def test_infinite_rebuild_interval_is_baseline():
    rep = evaluate_mitigation(math.inf, small_config(), [0, 1])
    for row in rep["runs"]:
        assert row["baseline"] == row["mitigated"]
    assert rep["builds_per_hour"] == 0.0


def test_mitigation_report_shape():
    rep = evaluate_mitigation(600.0, small_config(), [0])
    assert rep["builds_per_day"] == 144 and rep["builds_per_hour"] == 6.0
    assert set(rep["convergence_rate"]) == {"baseline", "mitigated"}
    assert rep["runs"][0]["mitigated"]["rebuilds"] >= 1
    with pytest.raises(ValueError):
        evaluate_mitigation(0.0, small_config(), [0])
