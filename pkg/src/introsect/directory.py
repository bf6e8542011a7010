"""Relay inventory, consensus weights and per-position selection probabilities.

Relay lists are read from a JSON array of Onionoo-like records::

    [{"id": "A1B2...", "address": "198.51.100.7", "country": "DE",
      "consensus_weight": 9300, "flags": ["Guard", "Running", ...],
      "guard_probability": 0.001, "middle_probability": 0.0007}, ...]

``country`` and both probability fields are optional.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

GUARD = "guard"
MIDDLE = "middle"
ROLES = (GUARD, MIDDLE)

UNKNOWN_COUNTRY = "??"
_PROB_TOL = 1e-9


class ConsensusParseError(ValueError):
    def __init__(self, index: int | None, message: str):
        self.index = index
        where = "document" if index is None else f"record {index}"
        super().__init__(f"{where}: {message}")


class DuplicateRelayError(ValueError):
    pass


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class Relay:
    id: str
    address: str
    country: str = UNKNOWN_COUNTRY
    consensus_weight: int = 0
    flags: frozenset = frozenset()
    guard_probability: float | None = None
    middle_probability: float | None = None

    def role_probability(self, role: str) -> float | None:
        if role == GUARD:
            return self.guard_probability
        if role == MIDDLE:
            return self.middle_probability
        raise ValueError(f"unknown role {role!r}")

    def eligible(self, role: str) -> bool:
        p = self.role_probability(role)
        if p is not None:
            return p > 0.0
        # no precomputed probability: fall back to weight and flags
        if self.consensus_weight <= 0:
            return False
        return role == MIDDLE or "Guard" in self.flags


@dataclass(frozen=True)
class RelaySnapshot:
    relays: tuple
    timestamp: str | None = None
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_id = {}
        for r in self.relays:
            if r.id in by_id:
                raise DuplicateRelayError(f"duplicate relay id {r.id!r}")
            by_id[r.id] = r
        object.__setattr__(self, "_by_id", by_id)
        for role in ROLES:
            total = sum(r.role_probability(role) or 0.0 for r in self.relays)
            if total > 1.0 + _PROB_TOL:
                raise ConsensusParseError(None, f"{role}_probability sums to {total:.6f} > 1")

    def __len__(self):
        return len(self.relays)

    def __iter__(self):
        return iter(self.relays)

    def __contains__(self, relay_id):
        return relay_id in self._by_id

    def __getitem__(self, relay_id: str) -> Relay:
        return self._by_id[relay_id]

    @property
    def total_guard_count(self) -> int:
        return sum(1 for r in self.relays if r.eligible(GUARD))

    @property
    def total_middle_count(self) -> int:
        return sum(1 for r in self.relays if r.eligible(MIDDLE))

    def replace(self, *relays: Relay) -> "RelaySnapshot":
        """Copy with the given relays swapped in by id."""
        new = {r.id: r for r in relays}
        return RelaySnapshot(tuple(new.get(r.id, r) for r in self.relays), self.timestamp)


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, float(x)))


def _parse_record(i: int, rec) -> Relay:
    if not isinstance(rec, Mapping):
        raise ConsensusParseError(i, "relay record must be an object")
    rid = rec.get("id")
    if not isinstance(rid, str) or not rid:
        raise ConsensusParseError(i, "missing or empty 'id'")
    address = rec.get("address")
    if not isinstance(address, str) or not address:
        raise ConsensusParseError(i, "missing or empty 'address'")
    weight = rec.get("consensus_weight", 0)
    if isinstance(weight, bool) or not isinstance(weight, int) or weight < 0:
        raise ConsensusParseError(i, f"'consensus_weight' must be a nonnegative integer, got {weight!r}")
    flags = rec.get("flags", [])
    if not isinstance(flags, list) or not all(isinstance(f, str) for f in flags):
        raise ConsensusParseError(i, "'flags' must be an array of strings")
    country = rec.get("country")
    if country is None or country == "":
        country = UNKNOWN_COUNTRY
    elif not isinstance(country, str) or len(country) != 2:
        raise ConsensusParseError(i, f"'country' must be a 2-character code, got {country!r}")
    else:
        country = country.upper()

    probs = {}
    for key in ("guard_probability", "middle_probability"):
        v = rec.get(key)
        if v is None:
            probs[key] = None
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v):
            raise ConsensusParseError(i, f"'{key}' must be a number")
        probs[key] = _clamp(v)

    flags = frozenset(flags)
    gp, mp = probs["guard_probability"], probs["middle_probability"]
    if gp and "Guard" not in flags:
        raise ConsensusParseError(i, "guard_probability > 0 without the Guard flag")
    if weight == 0 and (gp or mp):
        raise ConsensusParseError(i, "zero consensus_weight with non-zero selection probability")
    return Relay(rid, address, country, weight, flags, gp, mp)


def parse_consensus(document, timestamp: str | None = None) -> RelaySnapshot:
    """Build a snapshot from a relay-list document (JSON text, bytes or parsed list)."""
    if isinstance(document, (str, bytes, bytearray)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ConsensusParseError(None, f"invalid JSON: {exc}") from exc
    if not isinstance(document, list):
        raise ConsensusParseError(None, "top level must be an array of relay records")
    relays = tuple(_parse_record(i, rec) for i, rec in enumerate(document))
    return RelaySnapshot(relays, timestamp)


def load_snapshot(path) -> RelaySnapshot:
    path = Path(path)
    return parse_consensus(path.read_text(), timestamp=path.name)


def to_records(snapshot: RelaySnapshot) -> list:
    out = []
    for r in snapshot:
        rec = {
            "id": r.id,
            "address": r.address,
            "country": r.country,
            "consensus_weight": r.consensus_weight,
            "flags": sorted(r.flags),
        }
        if r.guard_probability is not None:
            rec["guard_probability"] = r.guard_probability
        if r.middle_probability is not None:
            rec["middle_probability"] = r.middle_probability
        out.append(rec)
    return out


def serialize(snapshot: RelaySnapshot, indent: int | None = None) -> str:
    return json.dumps(to_records(snapshot), indent=indent)


def eligible_relays(snapshot: RelaySnapshot, role: str) -> set:
    return {r.id for r in snapshot if r.eligible(role)}


def normalize_selection_distribution(snapshot: RelaySnapshot, role: str) -> dict:
    """Sampling distribution over the relays eligible for ``role``.

    Uses the precomputed role probability where present, otherwise the
    consensus weight.
    """
    raw = {}
    for r in snapshot:
        if not r.eligible(role):
            continue
        p = r.role_probability(role)
        raw[r.id] = p if p is not None else float(r.consensus_weight)
    total = math.fsum(raw.values())
    if not raw or total <= 0:
        raise DistributionError(f"no relay eligible for role {role!r}")
    return {rid: v / total for rid, v in raw.items()}


# -- synthetic networks ----------------------------------------------------

# Rough hosting mix; weights are relative country shares.
DEFAULT_COUNTRY_MIX = {
    "DE": 0.24, "US": 0.20, "NL": 0.10, "FR": 0.07, "GB": 0.03, "CA": 0.03,
    "SE": 0.03, "CH": 0.05, "FI": 0.04, "RU": 0.03, "AT": 0.03, "PL": 0.02,
    "RO": 0.03, "NO": 0.01, "ES": 0.01, "IT": 0.01, "BE": 0.01, "DK": 0.01,
    "AU": 0.01, "LU": 0.03, "BG": 0.02,
}


def _unique_addresses(rng: random.Random, n: int) -> list:
    seen = set()
    out = []
    while len(out) < n:
        a = f"{rng.randint(1, 223)}.{rng.randint(0, 255)}.{rng.randint(0, 255)}.{rng.randint(1, 254)}"
        if a not in seen:
            seen.add(a)
            out.append(a)
    return out


def with_weight_probabilities(relays: Sequence[Relay]) -> tuple:
    """Recompute guard/middle probabilities proportionally to consensus weight."""
    guard_total = sum(r.consensus_weight for r in relays if "Guard" in r.flags)
    middle_total = sum(r.consensus_weight for r in relays)
    out = []
    for r in relays:
        gp = r.consensus_weight / guard_total if ("Guard" in r.flags and guard_total) else 0.0
        mp = r.consensus_weight / middle_total if middle_total else 0.0
        out.append(replace(r, guard_probability=gp, middle_probability=mp))
    return tuple(out)


def synthetic_snapshot(n_relays: int, seed=0, guard_fraction: float = 0.6,
                       weight_median: float = 2500.0, weight_sigma: float = 0.5,
                       country_mix: Mapping[str, float] | None = None) -> RelaySnapshot:
    """Random consensus with log-normal weights and weight-proportional probabilities."""
    rng = random.Random(f"synthetic-snapshot:{seed}")
    mix = dict(country_mix or DEFAULT_COUNTRY_MIX)
    codes = sorted(mix)
    cum = []
    acc = 0.0
    for c in codes:
        acc += mix[c]
        cum.append(acc)
    addresses = _unique_addresses(rng, n_relays)
    base_flags = {"Running", "Valid", "Stable", "Fast", "V2Dir"}
    relays = []
    for i in range(n_relays):
        weight = max(1, int(round(weight_median * math.exp(rng.gauss(0.0, weight_sigma)))))
        flags = set(base_flags)
        if rng.random() < guard_fraction:
            flags.add("Guard")
        if rng.random() < 0.1:
            flags.add("Exit")
        country = rng.choices(codes, cum_weights=cum)[0]
        rid = "%040X" % rng.getrandbits(160)
        relays.append(Relay(rid, addresses[i], country, weight, frozenset(flags)))
    return RelaySnapshot(with_weight_probabilities(relays), timestamp=f"synthetic-{seed}")


def set_weight(snapshot: RelaySnapshot, relay_id: str, weight: int) -> RelaySnapshot:
    """Change one relay's weight and recompute weight-proportional probabilities."""
    snapshot[relay_id]  # KeyError for unknown ids
    relays = [replace(r, consensus_weight=weight) if r.id == relay_id else r for r in snapshot]
    return RelaySnapshot(with_weight_probabilities(relays), snapshot.timestamp)


def set_address(snapshot: RelaySnapshot, relay_id: str, address: str) -> RelaySnapshot:
    return snapshot.replace(replace(snapshot[relay_id], address=address))
