"""Deterministic discrete-event core and background flow generation."""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

EVENT_KINDS = ("cell_delivery", "circuit_expiry", "trial_start", "trial_timeout",
               "background_flow_tick")

DEFAULT_DIURNAL_PROFILE = {2.0: 0.6, 10.0: 1.0, 18.0: 1.4}


class SchedulingError(ValueError):
    pass


@dataclass
class Event:
    at: float
    kind: str
    payload: Any = None
    seq: int = -1


@dataclass(frozen=True)
class FlowObservation:
    """One relay-to-neighbour transmission as seen at ``at_relay``.

    ``src`` and ``dst`` are address tokens; they only coincide for co-located
    relays.
    """
    at_relay: str
    src: str
    dst: str
    at: float


class Simulator:
    """Virtual clock plus a (time, sequence) ordered event queue."""

    def __init__(self, start: float = 0.0):
        self.now = float(start)
        self._queue: list = []
        self._seq = itertools.count()
        self._handlers: dict = {}
        self.dispatched = 0

    def on(self, kind: str, handler: Callable[[Event], None]):
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        self._handlers[kind] = handler

    def schedule(self, event: Event) -> Event:
        if event.kind not in EVENT_KINDS:
            raise SchedulingError(f"unknown event kind {event.kind!r}")
        if event.at < self.now:
            raise SchedulingError(f"event at {event.at} is before the clock ({self.now})")
        event.seq = next(self._seq)
        heapq.heappush(self._queue, (event.at, event.seq, event))
        return event

    def at(self, t: float, kind: str, payload=None) -> Event:
        return self.schedule(Event(t, kind, payload))

    def after(self, delay: float, kind: str, payload=None) -> Event:
        return self.schedule(Event(self.now + delay, kind, payload))

    @property
    def pending(self) -> int:
        return len(self._queue)

    def peek(self) -> float:
        return self._queue[0][0] if self._queue else math.inf

    def _dispatch_next(self):
        at, _, ev = heapq.heappop(self._queue)
        self.now = at
        self.dispatched += 1
        handler = self._handlers.get(ev.kind)
        if handler is not None:
            handler(ev)

    def run_until(self, t: float) -> int:
        """Dispatch every event with ``at <= t``; the clock ends at ``t``."""
        if t < self.now:
            raise SchedulingError(f"cannot run back to {t} from {self.now}")
        n = 0
        while self._queue and self._queue[0][0] <= t:
            self._dispatch_next()
            n += 1
        self.now = float(t)
        return n

    def run(self, stop: Callable[[], bool], limit: float = math.inf) -> int:
        """Dispatch until ``stop()`` holds, the queue drains, or the next event is past ``limit``."""
        n = 0
        while not stop() and self._queue and self._queue[0][0] <= limit:
            self._dispatch_next()
            n += 1
        return n


def diurnal_intensity(base: float, time_of_day: float,
                      profile: Mapping[float, float] = DEFAULT_DIURNAL_PROFILE) -> float:
    """``base`` scaled by the multiplier of the anchor hour at or before ``time_of_day``.

    Piecewise constant; before the first anchor the last one (previous day) applies.
    """
    if not profile:
        raise ValueError("empty diurnal profile")
    if any(m <= 0 for m in profile.values()):
        raise ValueError("diurnal multipliers must be positive")
    hour = time_of_day % 24.0
    anchors = sorted(profile)
    mult = profile[anchors[-1]]
    for a in anchors:
        if a <= hour:
            mult = profile[a]
    return base * mult


def hour_of_day(t: float) -> float:
    return (t / 3600.0) % 24.0


def _neighbours(circuit, i: int, address: Callable[[str], str]) -> list:
    hops = circuit.hops
    out = []
    if i > 0:
        out.append(address(hops[i - 1]))
    elif circuit.client is not None:
        out.append(circuit.client)
    if i + 1 < len(hops):
        out.append(address(hops[i + 1]))
    elif circuit.destination is not None:
        out.append(circuit.destination)
    return out


def emit_background_traffic(circuits: Iterable, intensity: float, window: tuple,
                            sink: Callable[[FlowObservation], None], rng: random.Random,
                            address: Callable[[str], str], monitored=None) -> int:
    """Poisson flows (rate ``intensity`` per hop) over ``window = (t0, t1)``.

    Each flow leaves a hop toward one of its neighbours on the circuit, chosen
    uniformly; the client and destination tokens stand in for the missing
    neighbours at the ends. Only hops in ``monitored`` are materialised
    (all hops when ``monitored`` is None). Returns the number of flows emitted.
    """
    t0, t1 = window
    if t1 <= t0:
        raise ValueError("window must have t1 > t0")
    if intensity < 0:
        raise ValueError("intensity must be nonnegative")
    if intensity == 0:
        return 0
    n = 0
    for c in circuits:
        lo, hi = max(t0, c.created_at), min(t1, c.expires_at)
        if hi <= lo:
            continue
        for i, rid in enumerate(c.hops):
            if monitored is not None and rid not in monitored:
                continue
            nbrs = _neighbours(c, i, address)
            if not nbrs:
                continue
            src = address(rid)
            t = lo + rng.expovariate(intensity)
            while t < hi:
                dst = nbrs[0] if len(nbrs) == 1 else nbrs[rng.randrange(len(nbrs))]
                sink(FlowObservation(rid, src, dst, t))
                n += 1
                t += rng.expovariate(intensity)
    return n
