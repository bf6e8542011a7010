"""Weighted relay path selection and circuit populations.

Intro circuits are stored service-outward: ``hops = (EG, M0, M1, IP)``.
Background circuits are three hops, client-outward, and carry endpoint
address tokens (``client`` before hop 0, ``destination`` after the last hop).
"""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, replace
from typing import Iterable, Iterator

from .directory import GUARD, MIDDLE, RelaySnapshot, normalize_selection_distribution

HOUR = 3600.0
INTRO_LIFETIME = (18 * HOUR, 24 * HOUR)
SHORT_LIFETIME = 600.0

INTRO = "intro_service_side"
RENDEZVOUS = "rendezvous"
STREAM = "general_stream"
PURPOSES = (INTRO, RENDEZVOUS, STREAM)

# positions other than "guard" draw from the middle distribution
_ROLE_DIST = {"guard": GUARD, "middle": MIDDLE, "intro_point": MIDDLE,
              "rendezvous_point": MIDDLE, "exit": MIDDLE}


class CircuitConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CircuitSpec:
    purpose: str
    role_pattern: tuple
    lifetime: float | tuple  # fixed duration or (lo, hi) uniform range

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")
        want = 4 if self.purpose == INTRO else 3
        if len(self.role_pattern) != want:
            raise ValueError(f"{self.purpose} circuits have {want} hops, got {len(self.role_pattern)}")
        for role in self.role_pattern:
            if role not in _ROLE_DIST:
                raise ValueError(f"unknown role {role!r}")
        lo, hi = self.lifetime_range
        if not (0 < lo <= hi):
            raise ValueError(f"lifetime must be positive, got {self.lifetime!r}")

    @property
    def lifetime_range(self) -> tuple:
        if isinstance(self.lifetime, tuple):
            return self.lifetime
        return (self.lifetime, self.lifetime)

    def sample_lifetime(self, rng: random.Random) -> float:
        lo, hi = self.lifetime_range
        return lo if lo == hi else rng.uniform(lo, hi)


INTRO_SPEC = CircuitSpec(INTRO, ("guard", "middle", "middle", "intro_point"), INTRO_LIFETIME)
RENDEZVOUS_SPEC = CircuitSpec(RENDEZVOUS, ("guard", "middle", "rendezvous_point"), SHORT_LIFETIME)
STREAM_SPEC = CircuitSpec(STREAM, ("guard", "middle", "exit"), SHORT_LIFETIME)


@dataclass(frozen=True)
class Circuit:
    id: int
    hops: tuple
    spec: CircuitSpec
    created_at: float
    expires_at: float
    client: str | None = None
    destination: str | None = None

    def alive(self, now: float) -> bool:
        return self.created_at <= now < self.expires_at

    @property
    def purpose(self) -> str:
        return self.spec.purpose


class Sampler:
    """Cumulative-weight sampler for one position distribution."""

    def __init__(self, dist: dict):
        self.ids = sorted(dist)
        acc = 0.0
        self.cum = []
        for rid in self.ids:
            acc += dist[rid]
            self.cum.append(acc)
        self.prob = dict(dist)

    def __len__(self):
        return len(self.ids)

    def draw(self, rng: random.Random) -> str:
        return rng.choices(self.ids, cum_weights=self.cum)[0]


def samplers(snapshot: RelaySnapshot) -> dict:
    """Per-role samplers, cached on the (immutable) snapshot."""
    cache = snapshot.__dict__.setdefault("_samplers", {})
    if not cache:
        for role in (GUARD, MIDDLE):
            try:
                cache[role] = Sampler(normalize_selection_distribution(snapshot, role))
            except ValueError:
                cache[role] = Sampler({})
    return cache


def _fill(snapshot, pattern, rng, pinned, max_tries=10_000) -> tuple:
    s = samplers(snapshot)
    pinned = dict(pinned or {})
    fixed = [rid for rid in pinned.values()]
    if len(set(fixed)) != len(fixed):
        raise CircuitConstructionError("pinned relays must be distinct")
    # cheap feasibility check before rejection sampling
    need = {}
    for i, role in enumerate(pattern):
        if i not in pinned:
            need[_ROLE_DIST[role]] = need.get(_ROLE_DIST[role], 0) + 1
    for dist, n in need.items():
        if len(set(s[dist].ids) - set(fixed)) < n:
            raise CircuitConstructionError(f"not enough eligible {dist} relays for a {len(pattern)}-hop circuit")
    if need and len(set().union(*(s[d].ids for d in need)) - set(fixed)) < sum(need.values()):
        raise CircuitConstructionError("not enough distinct eligible relays")

    hops = [None] * len(pattern)
    used = set(fixed)
    for i, rid in pinned.items():
        hops[i] = rid
    for i, role in enumerate(pattern):
        if hops[i] is not None:
            continue
        sampler = s[_ROLE_DIST[role]]
        for _ in range(max_tries):
            rid = sampler.draw(rng)
            if rid not in used:
                break
        else:
            raise CircuitConstructionError(f"could not fill position {i} ({role}) without repeats")
        hops[i] = rid
        used.add(rid)
    return tuple(hops)


def sample_circuit(snapshot: RelaySnapshot, spec: CircuitSpec, rng: random.Random, *,
                   now: float = 0.0, circuit_id: int = 0, pinned: dict | None = None,
                   client: str | None = None, destination: str | None = None) -> Circuit:
    """Draw hops position by position, rejecting relays already on the path.

    ``pinned`` maps hop index to a fixed relay id.
    """
    hops = _fill(snapshot, spec.role_pattern, rng, pinned)
    return Circuit(circuit_id, hops, spec, now, now + spec.sample_lifetime(rng), client, destination)


def build_intro_circuit(snapshot: RelaySnapshot, service_guard: str, vanguard: str,
                        rng: random.Random, *, now: float = 0.0, circuit_id: int = 0,
                        intro_point: str | None = None, service_address: str | None = None,
                        lifetime: tuple = INTRO_LIFETIME) -> Circuit:
    """Four-hop Vanguard-Lite intro circuit ``(EG, M0, M1, IP)`` with EG and M0 pinned."""
    if service_guard not in snapshot or not snapshot[service_guard].eligible(GUARD):
        raise CircuitConstructionError(f"service guard {service_guard!r} is not guard-eligible")
    if vanguard not in snapshot or not snapshot[vanguard].eligible(MIDDLE):
        raise CircuitConstructionError(f"vanguard {vanguard!r} is not middle-eligible")
    pinned = {0: service_guard, 1: vanguard}
    if intro_point is not None:
        if intro_point not in snapshot or not snapshot[intro_point].eligible(MIDDLE):
            raise CircuitConstructionError(f"intro point {intro_point!r} is not middle-eligible")
        pinned[3] = intro_point
    spec = INTRO_SPEC if lifetime == INTRO_LIFETIME else replace(INTRO_SPEC, lifetime=tuple(lifetime))
    hops = _fill(snapshot, spec.role_pattern, rng, pinned)
    return Circuit(circuit_id, hops, spec, now, now + spec.sample_lifetime(rng), service_address)


def rebuild_internal(circuit: Circuit, snapshot: RelaySnapshot, rng: random.Random, *,
                     now: float, circuit_id: int) -> Circuit:
    """Fresh EG, M0 and M1 behind the same introduction point; keeps the expiry."""
    hops = _fill(snapshot, circuit.spec.role_pattern, rng, {3: circuit.hops[3]})
    return Circuit(circuit_id, hops, circuit.spec, now, circuit.expires_at, circuit.client)


def expire_and_replace(active: Iterable[Circuit], now: float, snapshot: RelaySnapshot,
                       rng: random.Random, *, ids: Iterator[int] | None = None,
                       rebuild_interval: float | None = None) -> list:
    """Drop circuits with ``expires_at <= now`` and sample their replacements.

    Short-lived circuits are replaced one for one with ``created_at = now``.
    Intro circuits are rebuilt on natural expiry (same guard and vanguard) or,
    when ``rebuild_interval`` is set, once they are that old (same intro point).
    """
    active = list(active)
    if ids is None:
        ids = itertools.count(max((c.id for c in active), default=-1) + 1)
    out = []
    for c in active:
        if c.purpose == INTRO:
            if c.expires_at <= now:
                out.append(build_intro_circuit(snapshot, c.hops[0], c.hops[1], rng, now=now,
                                               circuit_id=next(ids), service_address=c.client,
                                               lifetime=c.spec.lifetime_range))
            elif rebuild_interval is not None and now - c.created_at >= rebuild_interval:
                out.append(rebuild_internal(c, snapshot, rng, now=now, circuit_id=next(ids)))
            else:
                out.append(c)
        elif c.expires_at <= now:
            out.append(sample_circuit(snapshot, c.spec, rng, now=now, circuit_id=next(ids)))
        else:
            out.append(c)
    return out


@dataclass
class PersistentClient:
    address: str
    guard: str
    second_layer: str | None = None


class CircuitPopulation:
    """Fixed-size pool of short-lived background circuits with churn.

    A fraction of circuits belongs to long-lived clients that keep the same
    guard (and optionally a second-layer guard), giving stable relay pairs.
    Expired circuits are replaced at their expiry instant.
    """

    def __init__(self, snapshot: RelaySnapshot, size: int, rng: random.Random, *,
                 now: float = 0.0, lifetime: float = SHORT_LIFETIME,
                 persistent_fraction: float = 0.0, persistent_clients: int = 0,
                 second_layer_guards: bool = True, ids: Iterator[int] | None = None):
        self.snapshot = snapshot
        self.rng = rng
        self.lifetime = lifetime
        self.persistent_fraction = persistent_fraction if persistent_clients else 0.0
        self.ids = ids if ids is not None else itertools.count()
        self.circuits: dict = {}
        self.by_relay: dict = {}
        self._heap: list = []
        self._tokens = itertools.count()
        s = samplers(snapshot)
        self.clients = []
        for i in range(persistent_clients):
            guard = s[GUARD].draw(rng)
            l2 = None
            if second_layer_guards:
                l2 = guard
                while l2 == guard:
                    l2 = s[MIDDLE].draw(rng)
            self.clients.append(PersistentClient(f"client-p{i}", guard, l2))
        self._specs = {STREAM: replace(STREAM_SPEC, lifetime=lifetime),
                       RENDEZVOUS: replace(RENDEZVOUS_SPEC, lifetime=lifetime)}
        for _ in range(size):
            # stagger ages so expiries are spread over one lifetime
            born = now - rng.uniform(0.0, lifetime)
            self._add(self._new_circuit(born))

    def __len__(self):
        return len(self.circuits)

    def __iter__(self):
        return iter(self.circuits.values())

    @property
    def next_expiry(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def through(self, relay_id: str) -> list:
        return [self.circuits[cid] for cid in sorted(self.by_relay.get(relay_id, ()))]

    def _new_circuit(self, now: float) -> Circuit:
        rng = self.rng
        spec = self._specs[STREAM if rng.random() < 0.5 else RENDEZVOUS]
        dest = f"dest-{next(self._tokens)}"
        if self.clients and rng.random() < self.persistent_fraction:
            pc = self.clients[rng.randrange(len(self.clients))]
            pinned = {0: pc.guard}
            if pc.second_layer is not None:
                pinned[1] = pc.second_layer
            return sample_circuit(self.snapshot, spec, rng, now=now, circuit_id=next(self.ids),
                                  pinned=pinned, client=pc.address, destination=dest)
        client = f"client-{next(self._tokens)}"
        return sample_circuit(self.snapshot, spec, rng, now=now, circuit_id=next(self.ids),
                              client=client, destination=dest)

    def _add(self, c: Circuit):
        self.circuits[c.id] = c
        for rid in c.hops:
            self.by_relay.setdefault(rid, set()).add(c.id)
        heapq.heappush(self._heap, (c.expires_at, c.id))

    def _remove(self, cid: int):
        c = self.circuits.pop(cid)
        for rid in c.hops:
            self.by_relay[rid].discard(cid)

    def advance(self, now: float) -> int:
        """Replace every circuit that expired at or before ``now``; returns the count."""
        n = 0
        while self._heap and self._heap[0][0] <= now:
            at, cid = heapq.heappop(self._heap)
            self._remove(cid)
            self._add(self._new_circuit(at))
            n += 1
        return n
