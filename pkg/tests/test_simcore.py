import math
import random
import statistics

import pytest
from hypothesis import given, strategies as st

from introsect.pathsel import STREAM_SPEC, Circuit
from introsect.simcore import (FlowObservation, SchedulingError, Simulator, diurnal_intensity,
                               emit_background_traffic, hour_of_day)


@given(st.lists(st.floats(min_value=0, max_value=1e6, allow_nan=False), min_size=1, max_size=60))
def test_dispatch_in_time_then_insertion_order(times):
    sim = Simulator()
    seen = []
    sim.on("cell_delivery", lambda ev: seen.append((ev.at, ev.payload)))
    for i, t in enumerate(times):
        sim.at(t, "cell_delivery", i)
    sim.run_until(max(times))
    assert seen == sorted(((t, i) for i, t in enumerate(times)))


def test_run_until_moves_clock_and_leaves_future():
    sim = Simulator(10.0)
    sim.at(11.0, "trial_start")
    sim.at(20.0, "trial_start")
    assert sim.run_until(15.0) == 1
    assert sim.now == 15.0 and sim.pending == 1 and sim.peek() == 20.0


def test_past_and_unknown_events_rejected():
    sim = Simulator(5.0)
    with pytest.raises(SchedulingError):
        sim.at(4.0, "trial_start")
    with pytest.raises(SchedulingError):
        sim.at(6.0, "teleport")
    with pytest.raises(SchedulingError):
        sim.run_until(1.0)


def test_handlers_may_schedule_same_instant():
    sim = Simulator()
    order = []

    def first(ev):
        order.append(ev.payload)
        if ev.payload == "a":
            sim.at(sim.now, "cell_delivery", "c")

    sim.on("cell_delivery", first)
    sim.at(1.0, "cell_delivery", "a")
    sim.at(1.0, "cell_delivery", "b")
    sim.run(lambda: False)
    assert order == ["a", "b", "c"]


def test_run_stops_on_predicate():
    sim = Simulator()
    hits = []
    sim.on("trial_start", lambda ev: hits.append(ev.at))
    for t in range(10):
        sim.at(float(t), "trial_start")
    sim.run(lambda: len(hits) >= 3)
    assert hits == [0.0, 1.0, 2.0]


@pytest.mark.parametrize("hour, mult", [(2.0, 0.6), (9.99, 0.6), (10.0, 1.0), (18.0, 1.4), (1.0, 1.4), (23.5, 1.4)])
def test_diurnal_profile(hour, mult):
    assert diurnal_intensity(2.0, hour) == pytest.approx(2.0 * mult)


def test_diurnal_rejects_bad_profile():
    with pytest.raises(ValueError):
        diurnal_intensity(1.0, 3.0, {})
    with pytest.raises(ValueError):
        diurnal_intensity(1.0, 3.0, {0.0: 0.0})


def test_hour_of_day():
    assert hour_of_day(86400 + 18 * 3600) == pytest.approx(18.0)


def circ(i, hops, t0=0.0, t1=1e9):
    return Circuit(i, hops, STREAM_SPEC, t0, t1, f"client-{i}", f"dest-{i}")


def test_background_neighbours_only():
    c = circ(0, ("A", "B", "C"))
    out = []
    emit_background_traffic([c], 50.0, (0.0, 10.0), out.append, random.Random(1), lambda r: "addr-" + r)
    assert out
    by_hop = {o.at_relay: set() for o in out}
    for o in out:
        by_hop[o.at_relay].add(o.dst)
        assert 0.0 <= o.at < 10.0 and o.src == "addr-" + o.at_relay
    assert by_hop["A"] <= {"client-0", "addr-B"}
    assert by_hop["B"] <= {"addr-A", "addr-C"}
    assert by_hop["C"] <= {"addr-B", "dest-0"}


def test_background_monitored_filter_and_zero_rate():
    c = circ(0, ("A", "B", "C"))
    out = []
    emit_background_traffic([c], 20.0, (0.0, 5.0), out.append, random.Random(1), str, monitored={"B"})
    assert {o.at_relay for o in out} == {"B"}
    assert emit_background_traffic([c], 0.0, (0.0, 5.0), out.append, random.Random(1), str) == 0


def test_background_clipped_to_circuit_life():
    c = circ(0, ("A", "B", "C"), 2.0, 3.0)
    out = []
    emit_background_traffic([c], 100.0, (0.0, 10.0), out.append, random.Random(2), str)
    assert all(2.0 <= o.at < 3.0 for o in out)


def test_background_counts_are_poisson():
    # oracle: per-hop counts in a window of length T are Poisson(lambda * T)
    lam, T = 3.0, 2.0
    counts = []
    rng = random.Random(7)
    for i in range(3000):
        counts.append(emit_background_traffic([circ(i, ("A", "B", "C"))], lam, (0.0, T),
                                              lambda o: None, rng, str, monitored={"B"}))
    mean, var = statistics.fmean(counts), statistics.pvariance(counts)
    se = math.sqrt(lam * T / len(counts))
    assert abs(mean - lam * T) < 4 * se
    assert var == pytest.approx(lam * T, rel=0.1)


def test_background_validates_window():
    with pytest.raises(ValueError):
        emit_background_traffic([], 1.0, (5.0, 5.0), print, random.Random(), str)
    with pytest.raises(ValueError):
        emit_background_traffic([], -1.0, (0.0, 5.0), print, random.Random(), str)


def test_flow_observation_is_hashable():
    a = FlowObservation("R", "1.1.1.1", "2.2.2.2", 0.5)
    assert a == FlowObservation("R", "1.1.1.1", "2.2.2.2", 0.5)
    assert len({a, a}) == 1
