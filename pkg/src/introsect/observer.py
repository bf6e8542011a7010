"""Monitored-relay tap: windowed destination capture under pseudonyms.

Pseudonyms follow P(addr) = SHA256(RSA_pk(addr)) with textbook (unpadded)
RSA under a per-run public key whose private half is dropped right after
generation. Only destination pseudonyms are kept; no counts, timestamps or
sources survive a window.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, NewType

from cryptography.hazmat.primitives.asymmetric import rsa

from .simcore import FlowObservation

Pseudonym = NewType("Pseudonym", bytes)
PSEUDONYM_BYTES = 32


class ObserverUsageError(RuntimeError):
    pass


class PseudonymKey:
    """Ephemeral RSA public key. Never serialized; repr hides the modulus."""

    __slots__ = ("_n", "_e", "_k")

    def __init__(self, n: int, e: int = 65537):
        self._n = n
        self._e = e
        self._k = (n.bit_length() + 7) // 8

    @classmethod
    def generate(cls, bits: int = 2048) -> "PseudonymKey":
        private = rsa.generate_private_key(public_exponent=65537, key_size=bits)
        pub = private.public_key().public_numbers()
        del private
        return cls(pub.n, pub.e)

    def __repr__(self):
        return f"<PseudonymKey {self._n.bit_length()}-bit>"

    def __getstate__(self):
        raise TypeError("PseudonymKey is not serializable")

    def material(self) -> bytes:
        """Raw modulus bytes; exposed only so tests can scan artifacts for leaks."""
        return self._n.to_bytes(self._k, "big")


def pseudonymize(address: str, key: PseudonymKey) -> Pseudonym:
    m = int.from_bytes(address.encode("utf-8"), "big")
    if m >= key._n:
        raise ValueError("address too long for the pseudonym key")
    c = pow(m, key._e, key._n)
    return Pseudonym(hashlib.sha256(c.to_bytes(key._k, "big")).digest())


@dataclass(frozen=True)
class AnonymitySet:
    stage: int
    trial: int
    members: frozenset
    window: tuple

    def __post_init__(self):
        if self.stage < 1 or self.trial < 1:
            raise ValueError("stage and trial are 1-based")
        if self.window[1] < self.window[0]:
            raise ValueError("window stop precedes start")

    def __len__(self):
        return len(self.members)

    @property
    def failed(self) -> bool:
        # the successor must always show up; an empty capture is a broken trial
        return not self.members

    def to_dict(self) -> dict:
        return {"stage": self.stage, "trial": self.trial,
                "window": [self.window[0], self.window[1]],
                "members": sorted(m.hex() for m in self.members)}


@dataclass(frozen=True)
class WindowHandle:
    relay: str
    stage: int
    trial: int
    start: float


class Observer:
    """Per-run packet-logger analogue. Feed it observations via :meth:`observe`."""

    def __init__(self, key: PseudonymKey, clock: Callable[[], float]):
        self._key = key
        self._clock = clock
        self._open: dict = {}
        self._cache: dict = {}

    def pseudonym(self, address: str) -> Pseudonym:
        p = self._cache.get(address)
        if p is None:
            p = self._cache[address] = pseudonymize(address, self._key)
        return p

    def is_open(self, relay: str) -> bool:
        return relay in self._open

    def start_window(self, relay: str, stage: int, trial: int) -> WindowHandle:
        if relay in self._open:
            raise ObserverUsageError(f"a window is already open at {relay}")
        handle = WindowHandle(relay, stage, trial, self._clock())
        self._open[relay] = (handle, set())
        return handle

    def observe(self, obs: FlowObservation):
        entry = self._open.get(obs.at_relay)
        if entry is not None:
            entry[1].add(self.pseudonym(obs.dst))

    def stop_window(self, handle: WindowHandle) -> AnonymitySet:
        entry = self._open.get(handle.relay)
        if entry is None or entry[0] is not handle:
            raise ObserverUsageError(f"no open window for {handle}")
        del self._open[handle.relay]
        return AnonymitySet(handle.stage, handle.trial, frozenset(entry[1]),
                            (handle.start, self._clock()))

    def abort_window(self, handle: WindowHandle):
        """Close without producing a set (failed handshake)."""
        entry = self._open.get(handle.relay)
        if entry is not None and entry[0] is handle:
            del self._open[handle.relay]
