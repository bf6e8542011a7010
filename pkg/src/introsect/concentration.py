"""Selection-probability mass of relays hosted inside a jurisdiction set."""

from __future__ import annotations

import csv
import io
import math
import random
from collections import Counter
from dataclasses import dataclass

from .directory import GUARD, MIDDLE, UNKNOWN_COUNTRY, RelaySnapshot, normalize_selection_distribution
from .pathsel import INTRO_SPEC, _fill, samplers

REPORT_HEADER = ("country", "relay_count", "guard_mass", "middle_mass", "in_fourteen_eyes")


@dataclass(frozen=True)
class JurisdictionSet:
    name: str
    countries: frozenset

    def __post_init__(self):
        object.__setattr__(self, "countries", frozenset(c.upper() for c in self.countries))

    def __contains__(self, country: str) -> bool:
        return country in self.countries

    def union(self, other: "JurisdictionSet", name: str | None = None) -> "JurisdictionSet":
        return JurisdictionSet(name or f"{self.name}+{other.name}", self.countries | other.countries)


FIVE_EYES = JurisdictionSet("five_eyes", frozenset({"US", "GB", "CA", "AU", "NZ"}))
NINE_EYES = JurisdictionSet("nine_eyes", FIVE_EYES.countries | {"DK", "FR", "NL", "NO"})
FOURTEEN_EYES = JurisdictionSet("fourteen_eyes", NINE_EYES.countries | {"DE", "BE", "IT", "ES", "SE"})
BUILTIN_SETS = {s.name: s for s in (FIVE_EYES, NINE_EYES, FOURTEEN_EYES)}


def jurisdiction(name_or_codes) -> JurisdictionSet:
    """Look up a built-in set by name or build one from comma-separated codes."""
    if isinstance(name_or_codes, JurisdictionSet):
        return name_or_codes
    if name_or_codes in BUILTIN_SETS:
        return BUILTIN_SETS[name_or_codes]
    codes = [c.strip() for c in str(name_or_codes).split(",") if c.strip()]
    if not codes or any(len(c) != 2 for c in codes):
        raise ValueError(f"unknown jurisdiction set {name_or_codes!r}")
    return JurisdictionSet("custom", frozenset(codes))


def _role_masses(snapshot: RelaySnapshot, role: str) -> dict:
    """Per-relay selection probability; raw probabilities when given, else weight share."""
    if all(r.role_probability(role) is not None for r in snapshot):
        return {r.id: r.role_probability(role) for r in snapshot}
    try:
        return normalize_selection_distribution(snapshot, role)
    except ValueError:
        return {}


def jurisdiction_mass(snapshot: RelaySnapshot, jset: JurisdictionSet, role: str) -> float:
    if role not in (GUARD, MIDDLE):
        raise ValueError(f"unknown role {role!r}")
    masses = _role_masses(snapshot, role)
    return math.fsum(masses.get(r.id, 0.0) for r in snapshot
                     if r.country != UNKNOWN_COUNTRY and r.country in jset)


def all_hops_intro_probability(p_guard: float, p_middle: float) -> float:
    """Chance that all four intro-circuit hops fall in the set, hops drawn independently."""
    for name, v in (("p_guard", p_guard), ("p_middle", p_middle)):
        if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
            raise ValueError(f"{name} must be in [0, 1], got {v!r}")
    return p_guard * p_middle ** 3


@dataclass(frozen=True)
class ConcentrationReport:
    set_name: str
    p_guard: float
    p_middle: float
    p_all_hops_intro: float
    relays_inside: int
    relays_outside: int
    timestamp: str | None = None


def concentration_report(snapshot: RelaySnapshot, jset: JurisdictionSet) -> ConcentrationReport:
    pg = jurisdiction_mass(snapshot, jset, GUARD)
    pm = jurisdiction_mass(snapshot, jset, MIDDLE)
    inside = sum(1 for r in snapshot if r.country in jset)
    return ConcentrationReport(jset.name, pg, pm, all_hops_intro_probability(min(pg, 1.0), min(pm, 1.0)),
                               inside, len(snapshot) - inside, snapshot.timestamp)


def emit_distribution_report(snapshot: RelaySnapshot, sets=(FOURTEEN_EYES,)) -> str:
    """Per-country CSV rows, then one ``set:<name>`` summary row per jurisdiction set.

    Summary rows reuse the columns: ``relay_count`` is the in-set count,
    the masses are the in-set totals and the last column holds the all-hops
    estimate.
    """
    guard = _role_masses(snapshot, GUARD)
    middle = _role_masses(snapshot, MIDDLE)
    counts = Counter(r.country for r in snapshot)
    gsum, msum = Counter(), Counter()
    for r in snapshot:
        gsum[r.country] += guard.get(r.id, 0.0)
        msum[r.country] += middle.get(r.id, 0.0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    for c in sorted(counts):
        w.writerow([c, counts[c], f"{gsum[c]:.6f}", f"{msum[c]:.6f}",
                    int(c != UNKNOWN_COUNTRY and c in FOURTEEN_EYES)])
    for s in sets:
        rep = concentration_report(snapshot, jurisdiction(s))
        w.writerow([f"set:{rep.set_name}", rep.relays_inside, f"{rep.p_guard:.6f}",
                    f"{rep.p_middle:.6f}", f"{rep.p_all_hops_intro:.6f}"])
    return buf.getvalue()


def sampled_all_hops_probability(snapshot: RelaySnapshot, jset: JurisdictionSet,
                                 samples: int = 10_000, seed=0) -> float:
    """Monte Carlo estimate with distinct hops (sampling without replacement)."""
    rng = random.Random(f"concentration-mc:{seed}")
    samplers(snapshot)
    inside = {r.id for r in snapshot if r.country in jset}
    hits = 0
    for _ in range(samples):
        hops = _fill(snapshot, INTRO_SPEC.role_pattern, rng, None)
        hits += all(h in inside for h in hops)
    return hits / samples
