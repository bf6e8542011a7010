"""Onion-service introduction and rendezvous at cell granularity.

Every relay-to-relay hop of a cell is a ``cell_delivery`` event; the sending
relay emits a :class:`FlowObservation` toward its next hop at send time.
Handshake material (cookies, g^x, g^y) is opaque random tokens compared by
equality.

Latencies on the INTRODUCE1 -> RENDEZVOUS2 chain are drawn per hop and then
rescaled so the chain sums to a target drawn from ``delta_envelope``.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable

from .directory import MIDDLE, RelaySnapshot
from .pathsel import (INTRO, RENDEZVOUS_SPEC, Circuit, CircuitPopulation, sample_circuit,
                      samplers, rebuild_internal)
from .simcore import Event, FlowObservation, Simulator, emit_background_traffic

CELL_KINDS = ("ESTABLISH_INTRO", "INTRO_ESTABLISHED", "ESTABLISH_RENDEZVOUS",
              "RENDEZVOUS_ESTABLISHED", "INTRODUCE1", "INTRODUCE2", "INTRODUCE_ACK",
              "RENDEZVOUS1", "RENDEZVOUS2", "BEGIN")

# INTRODUCE1 (3) + INTRODUCE2 (4) + RENDEZVOUS1 (3) + RENDEZVOUS2 (3)
CRITICAL_SEGMENTS = 13


class EstablishError(RuntimeError):
    pass


class ConnectError(RuntimeError):
    pass


@dataclass(frozen=True)
class Cell:
    kind: str
    circuit_id: int
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.kind!r}")


@dataclass
class HandshakeTranscript:
    t_introduce1: float | None = None
    t_rendezvous2: float | None = None
    intro_circuit_id: int | None = None
    rendezvous_circuit_id: int | None = None
    success: bool = False
    reason: str = ""
    cells: list = field(default_factory=list)  # (time, kind) in emission order

    @property
    def delta(self) -> float | None:
        if self.t_introduce1 is None or self.t_rendezvous2 is None:
            return None
        return self.t_rendezvous2 - self.t_introduce1


@dataclass
class OnionService:
    onion_address: str
    address: str  # network location; ground truth only


@dataclass
class AttackClient:
    address: str = "client-adversary"


def forward_introduce2(intro_circuit: Circuit, address: Callable[[str], str],
                       t0: float, latencies) -> list:
    """Flows produced by relaying INTRODUCE2 from the IP back to the service.

    ``intro_circuit.hops`` is ``(EG, M0, M1, IP)`` and ``intro_circuit.client``
    the service address; returns the IP->M1, M1->M0, M0->EG, EG->HS flows.
    """
    route = list(reversed(intro_circuit.hops))
    ends = [address(r) for r in route] + [intro_circuit.client]
    out = []
    t = t0
    for i, rid in enumerate(route):
        out.append(FlowObservation(rid, ends[i], ends[i + 1], t))
        t += latencies[i]
    return out


@dataclass
class _Handshake:
    client: AttackClient
    onion: str
    transcript: HandshakeTranscript
    on_introduce1: Callable | None
    on_rendezvous2: Callable | None
    fault: str | None
    rend_circuit: Circuit | None = None
    intro_path: Circuit | None = None
    rp: str | None = None
    cookie: str | None = None
    gx: str | None = None
    lat: list | None = None
    done: bool = False


@dataclass
class _Hop:
    hs: _Handshake
    cell: Cell
    route: list
    lat: list
    i: int
    observe: bool
    on_arrive: Callable
    check: Callable | None = None


class OnionNetwork:
    """Relays, background circuits, registered intro points and the tap feed."""

    def __init__(self, snapshot: RelaySnapshot, sim: Simulator, rng: random.Random, *,
                 population: CircuitPopulation | None = None, background_rng=None,
                 intensity=0.0, observer=None,
                 latency: tuple = (0.020, 0.150), delta_envelope: tuple = (0.5, 1.5),
                 tick: float = 0.25, auxiliary_flows: bool = False, timeout: float = 10.0,
                 ids=None, mitigation_rng: random.Random | None = None):
        self.snapshot = snapshot
        self.sim = sim
        self.rng = rng
        self.background_rng = background_rng or random.Random(rng.random())
        self.population = population
        self.mitigation_rng = mitigation_rng or rng
        self.intensity = intensity if callable(intensity) else (lambda t, v=float(intensity): v)
        self.observer = observer
        self.latency = latency
        self.delta_envelope = delta_envelope
        self.tick = tick
        self.auxiliary_flows = auxiliary_flows
        self.timeout = timeout
        self.ids = ids if ids is not None else (population.ids if population else iter(range(10**9)))
        self.registry: dict = {}      # onion -> {ip relay id: Circuit}
        self.services: dict = {}
        self.rebuilds = 0
        self.flow_log: list | None = None
        self._ticking: set = set()
        sim.on("cell_delivery", self._on_cell)
        sim.on("background_flow_tick", self._on_tick)
        sim.on("circuit_expiry", self._on_expiry)
        sim.on("trial_timeout", self._on_timeout)
        if population is not None:
            population.advance(sim.now)
            sim.at(max(sim.now, population.next_expiry), "circuit_expiry", None)

    # -- addressing ---------------------------------------------------------

    def address(self, node: str) -> str:
        return self.snapshot[node].address if node in self.snapshot else node

    def _emit(self, obs: FlowObservation):
        if self.flow_log is not None:
            self.flow_log.append(obs)
        if self.observer is not None:
            self.observer.observe(obs)

    # -- intro points ---------------------------------------------------------

    def establish_intro(self, service: OnionService, intro_circuit: Circuit) -> Cell:
        """ESTABLISH_INTRO over ``intro_circuit``; registers its last hop as an IP."""
        if intro_circuit.purpose != INTRO:
            raise EstablishError(f"circuit {intro_circuit.id} is not an intro circuit")
        if not intro_circuit.alive(self.sim.now):
            raise EstablishError(f"circuit {intro_circuit.id} is not alive")
        self.services[service.onion_address] = service
        self.registry.setdefault(service.onion_address, {})[intro_circuit.hops[3]] = intro_circuit
        return Cell("INTRO_ESTABLISHED", intro_circuit.id, {"intro_point": intro_circuit.hops[3]})

    def intro_circuit(self, onion: str, ip: str) -> Circuit | None:
        return self.registry.get(onion, {}).get(ip)

    def schedule_rebuilds(self, onion: str, ip: str, interval: float):
        """Mitigation: rebuild the hops behind ``ip`` every ``interval`` seconds."""
        c = self.intro_circuit(onion, ip)
        self.sim.at(c.created_at + interval, "circuit_expiry", ("rebuild", onion, ip, interval))

    # -- background -----------------------------------------------------------

    def monitor(self, relay: str):
        """Start materialising background flows at ``relay`` (while its tap is open)."""
        if relay not in self._ticking:
            self._ticking.add(relay)
            self.sim.at(self.sim.now, "background_flow_tick", relay)

    def _on_tick(self, ev: Event):
        relay = ev.payload
        if self.observer is None or not self.observer.is_open(relay):
            self._ticking.discard(relay)
            return
        if self.population is not None:
            now = self.sim.now
            emit_background_traffic(
                self.population.through(relay), self.intensity(now), (now, now + self.tick),
                lambda obs: self.sim.at(obs.at, "cell_delivery", obs),
                self.background_rng, self.address, monitored={relay})
        self.sim.at(self.sim.now + self.tick, "background_flow_tick", relay)

    def _on_expiry(self, ev: Event):
        if ev.payload is None:
            self.population.advance(self.sim.now)
            self.sim.at(self.population.next_expiry, "circuit_expiry", None)
            return
        _, onion, ip, interval = ev.payload
        old = self.intro_circuit(onion, ip)
        if old is None or not old.alive(self.sim.now):
            return
        new = rebuild_internal(old, self.snapshot, self.mitigation_rng, now=self.sim.now, circuit_id=next(self.ids))
        self.registry[onion][ip] = new
        self.rebuilds += 1
        self.sim.at(self.sim.now + interval, "circuit_expiry", ev.payload)

    # -- cell transport -------------------------------------------------------

    def _lat(self) -> float:
        return self.rng.uniform(*self.latency)

    def _send(self, hs: _Handshake, cell: Cell, route: list, lat: list, on_arrive, *,
              observe: bool = True, check=None):
        hs.transcript.cells.append((self.sim.now, cell.kind))
        self.sim.at(self.sim.now, "cell_delivery", _Hop(hs, cell, route, lat, 0, observe, on_arrive, check))

    def _on_cell(self, ev: Event):
        p = ev.payload
        if isinstance(p, FlowObservation):
            self._emit(p)
            return
        if p.hs.done:
            return
        node = p.route[p.i]
        if p.i == len(p.route) - 1:
            p.on_arrive(p.hs, p.cell)
            return
        if p.check is not None and not p.check():
            self._finish(p.hs, False, f"{p.cell.kind} dropped: circuit gone")
            return
        if p.observe and node in self.snapshot:
            self._emit(FlowObservation(node, self.address(node), self.address(p.route[p.i + 1]), self.sim.now))
        self.sim.at(self.sim.now + p.lat[p.i], "cell_delivery",
                    _Hop(p.hs, p.cell, p.route, p.lat, p.i + 1, p.observe, p.on_arrive, p.check))

    def _finish(self, hs: _Handshake, success: bool, reason: str = ""):
        if hs.done:
            return
        hs.done = True
        hs.transcript.success = success
        hs.transcript.reason = reason
        if success:
            hs.transcript.t_rendezvous2 = self.sim.now
            if hs.on_rendezvous2 is not None:
                hs.on_rendezvous2()

    def _on_timeout(self, ev: Event):
        self._finish(ev.payload, False, "timeout")

    def _token(self) -> str:
        return "%040x" % self.rng.getrandbits(160)

    # -- client side ----------------------------------------------------------

    def client_connect(self, client: AttackClient, onion: str, rng: random.Random | None = None, *,
                       on_introduce1: Callable | None = None,
                       on_rendezvous2: Callable | None = None,
                       fault: str | None = None) -> HandshakeTranscript:
        """Run one full introduction + rendezvous and return its transcript.

        ``on_introduce1`` fires just before INTRODUCE1 leaves the client and
        ``on_rendezvous2`` when RENDEZVOUS2 arrives. ``fault="cookie"`` makes
        the service answer with a wrong cookie.
        """
        intros = self.registry.get(onion)
        if not intros:
            raise ConnectError(f"{onion} has no registered introduction point")
        rng = rng or self.rng
        hs = _Handshake(client, onion, HandshakeTranscript(), on_introduce1, on_rendezvous2, fault)
        rend = sample_circuit(self.snapshot, RENDEZVOUS_SPEC, rng, now=self.sim.now,
                              circuit_id=next(self.ids), client=client.address)
        hs.rend_circuit = rend
        hs.rp = rend.hops[-1]
        hs.cookie = self._token()
        hs.transcript.rendezvous_circuit_id = rend.id
        route = [client.address, *rend.hops]
        self._send(hs, Cell("ESTABLISH_RENDEZVOUS", rend.id, {"cookie": hs.cookie}), route,
                   [self._lat() for _ in rend.hops], self._rp_registered,
                   observe=self.auxiliary_flows)
        self.sim.run(lambda: hs.done)
        if not hs.done:
            self._finish(hs, False, "simulation drained")
        return hs.transcript

    def _rp_registered(self, hs: _Handshake, cell: Cell):
        # RENDEZVOUS_ESTABLISHED travels back; then the client introduces itself
        back = [hs.rp, *reversed(hs.rend_circuit.hops[:-1]), hs.client.address]
        self._send(hs, Cell("RENDEZVOUS_ESTABLISHED", hs.rend_circuit.id), back,
                   [self._lat() for _ in range(len(back) - 1)], self._send_introduce1,
                   observe=self.auxiliary_flows)

    def _send_introduce1(self, hs: _Handshake, cell: Cell):
        ips = sorted(self.registry[hs.onion])
        ip = ips[self.rng.randrange(len(ips))]
        # circuit to the IP: fresh guard and middle, IP pinned last
        to_ip = sample_circuit(self.snapshot, RENDEZVOUS_SPEC, self.rng, now=self.sim.now,
                               circuit_id=next(self.ids), pinned={2: ip}, client=hs.client.address)
        hs.intro_path = to_ip
        lat = [self._lat() for _ in range(CRITICAL_SEGMENTS)]
        target = self.rng.uniform(*self.delta_envelope)
        scale = target / sum(lat)
        hs.lat = [x * scale for x in lat]
        hs.gx = self._token()
        hs.transcript.t_introduce1 = self.sim.now
        if hs.on_introduce1 is not None:
            hs.on_introduce1()
        self.sim.at(self.sim.now + self.timeout, "trial_timeout", hs)
        route = [hs.client.address, *to_ip.hops]
        payload = {"onion": hs.onion, "rendezvous_point": hs.rp, "cookie": hs.cookie, "gx": hs.gx}
        self._send(hs, Cell("INTRODUCE1", to_ip.id, payload), route, hs.lat[0:3], self._at_intro_point,
                   observe=self.auxiliary_flows)

    # -- introduction point -----------------------------------------------------

    def _at_intro_point(self, hs: _Handshake, cell: Cell):
        ip = hs.intro_path.hops[-1]
        circ = self.intro_circuit(cell.payload["onion"], ip)
        if circ is None or not circ.alive(self.sim.now):
            self._finish(hs, False, "introduction point has no live circuit")
            return
        hs.transcript.intro_circuit_id = circ.id
        onion = cell.payload["onion"]

        def still_there(c=circ):
            return self.intro_circuit(onion, ip) is c and c.alive(self.sim.now)

        route = [*reversed(circ.hops), circ.client]
        self._send(hs, Cell("INTRODUCE2", circ.id, dict(cell.payload)), route, hs.lat[3:7],
                   lambda h, c: self._at_service(h, c, circ), check=still_there)
        ack_route = [ip, *reversed(hs.intro_path.hops[:-1]), hs.client.address]
        self._send(hs, Cell("INTRODUCE_ACK", hs.intro_path.id), ack_route,
                   [self._lat() for _ in range(len(ack_route) - 1)], self._ack_received,
                   observe=self.auxiliary_flows)

    def _ack_received(self, hs: _Handshake, cell: Cell):
        # client tears down its circuit to the introduction point
        hs.intro_path = None

    # -- service side -----------------------------------------------------------

    def _at_service(self, hs: _Handshake, cell: Cell, circ: Circuit):
        rp = cell.payload["rendezvous_point"]
        guard, vanguard = circ.hops[0], circ.hops[1]
        hops = [guard, vanguard, rp]
        if rp in (guard, vanguard):
            # replace the clashing pinned hop with a fresh middle
            s = samplers(self.snapshot)[MIDDLE]
            fresh = rp
            while fresh in hops:
                fresh = s.draw(self.rng)
            hops[hops.index(rp)] = fresh
        cookie = cell.payload["cookie"] if hs.fault != "cookie" else self._token()
        gy = self._token()
        auth = hashlib.sha256((cell.payload["gx"] + gy).encode()).hexdigest()
        sid = next(self.ids)
        route = [circ.client, *hops]
        self._send(hs, Cell("RENDEZVOUS1", sid, {"cookie": cookie, "gy": gy, "auth": auth}), route,
                   hs.lat[7:10], self._at_rendezvous_point, observe=self.auxiliary_flows)

    def _at_rendezvous_point(self, hs: _Handshake, cell: Cell):
        if cell.payload["cookie"] != hs.cookie:
            self._finish(hs, False, "rendezvous cookie mismatch")
            return
        hs.cookie = None  # consumed
        route = [hs.rp, *reversed(hs.rend_circuit.hops[:-1]), hs.client.address]
        payload = {"gy": cell.payload["gy"], "auth": cell.payload["auth"]}
        self._send(hs, Cell("RENDEZVOUS2", hs.rend_circuit.id, payload), route, hs.lat[10:13],
                   self._rendezvous2_received, observe=self.auxiliary_flows)

    def _rendezvous2_received(self, hs: _Handshake, cell: Cell):
        expect = hashlib.sha256((hs.gx + cell.payload["gy"]).encode()).hexdigest()
        if cell.payload["auth"] != expect:
            self._finish(hs, False, "handshake verification failed")
            return
        hs.transcript.cells.append((self.sim.now, "RENDEZVOUS2"))
        self._finish(hs, True)

    # -- ground truth -----------------------------------------------------------

    def true_path(self, onion: str, ip: str) -> list:
        """``[IP, M1, M0, EG]`` relay ids plus the service address, from the IP inward."""
        c = self.intro_circuit(onion, ip)
        return [*reversed(c.hops), c.client]
