"""Random peer sampling: a bounded, continuously shuffled partial view.

Each node keeps up to ``view_size`` peer descriptors. Periodic shuffles
swap a random half of the view (plus self) with a random partner, which
keeps the overlay connected and the views close to uniform samples of the
membership. Relays for a query are drawn uniformly without replacement
from the attested, non-blacklisted part of the view.

Peer identity equals the peer's listen address in this deployment; the
descriptor keeps both fields so that other id schemes remain possible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from threading import RLock

DEFAULT_VIEW_SIZE = 20
BLACKLIST_BASE_S = 60.0
BLACKLIST_CAP_S = 3600.0


class NoEligiblePeersError(RuntimeError):
    """The view holds no attested, non-blacklisted peer at all."""


@dataclass(frozen=True)
class PeerDescriptor:
    peer_id: str
    address: str
    attested: bool = False
    last_seen: float = 0.0
    blacklisted_until: float | None = None
    strikes: int = 0

    def is_blacklisted(self, now: float) -> bool:
        return self.blacklisted_until is not None and now < self.blacklisted_until


@dataclass
class RelaySample:
    peers: list[PeerDescriptor]
    shortfall: int = 0


class PartialView:
    """Mutable peer view; mutations serialized, reads return snapshots."""

    def __init__(self, self_id: str, view_size: int = DEFAULT_VIEW_SIZE):
        if view_size < 1:
            raise ValueError("view_size must be positive")
        self.self_id = self_id
        self.view_size = view_size
        self._peers: dict[str, PeerDescriptor] = {}
        self._rejected: set[str] = set()  # failed attestation, never relay
        self._lock = RLock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._peers)

    def snapshot(self) -> list[PeerDescriptor]:
        with self._lock:
            return list(self._peers.values())

    def get(self, peer_id: str) -> PeerDescriptor | None:
        with self._lock:
            return self._peers.get(peer_id)

    # -- bootstrap ---------------------------------------------------------

    def bootstrap(self, registry: list[str], rng: random.Random, now: float = 0.0) -> int:
        """Fill the view with up to view_size random registry addresses.

        Raises ValueError when the registry holds no peer besides self.
        """
        others = sorted({a for a in registry if a and a != self.self_id})
        if not others:
            raise ValueError("registry holds no usable peer addresses")
        chosen = rng.sample(others, min(self.view_size, len(others)))
        with self._lock:
            for addr in chosen:
                self._peers[addr] = PeerDescriptor(peer_id=addr, address=addr, last_seen=now)
        return len(chosen)

    # -- shuffling ---------------------------------------------------------

    def make_offer(self, rng: random.Random, now: float) -> list[PeerDescriptor]:
        """A uniform random half of the view plus a descriptor for self."""
        with self._lock:
            peers = list(self._peers.values())
        rng.shuffle(peers)
        half = peers[: (len(peers) + 1) // 2]
        me = PeerDescriptor(peer_id=self.self_id, address=self.self_id, last_seen=now)
        return half + [me]

    def merge(
        self,
        received: list[PeerDescriptor],
        rng: random.Random,
        now: float,
        sent: list[PeerDescriptor] | None = None,
    ) -> None:
        """Fold a partner's offer into the view.

        Duplicates collapse by peer_id keeping the freshest last_seen.
        Attestation and blacklist state are local knowledge: entries already
        known keep theirs, new arrivals start unattested. Overflow eviction
        prefers the entries we just offered to the partner (they live there
        now), then falls back to uniform random eviction; pure random
        truncation measurably starves nodes of in-edges and partitions the
        overlay.
        """
        with self._lock:
            for desc in received:
                if desc.peer_id == self.self_id:
                    continue
                known = self._peers.get(desc.peer_id)
                if known is None:
                    self._peers[desc.peer_id] = PeerDescriptor(
                        peer_id=desc.peer_id,
                        address=desc.address,
                        last_seen=max(desc.last_seen, 0.0),
                    )
                elif desc.last_seen > known.last_seen:
                    self._peers[desc.peer_id] = replace(known, last_seen=desc.last_seen)
            overflow = len(self._peers) - self.view_size
            if overflow <= 0:
                return
            received_ids = {d.peer_id for d in received}
            swap_out = sorted(
                {d.peer_id for d in sent or []} & set(self._peers) - received_ids
            )
            rng.shuffle(swap_out)
            evict = swap_out[:overflow]
            overflow -= len(evict)
            if overflow > 0:
                rest = sorted(set(self._peers) - set(evict))
                evict += rng.sample(rest, overflow)
            for pid in evict:
                del self._peers[pid]

    # -- relay selection ---------------------------------------------------

    def eligible(self, now: float) -> list[PeerDescriptor]:
        with self._lock:
            return [
                p
                for p in self._peers.values()
                if p.attested and not p.is_blacklisted(now) and p.peer_id not in self._rejected
            ]

    def sample_relays(
        self,
        count: int,
        rng: random.Random,
        now: float,
        exclude: set[str] | None = None,
    ) -> RelaySample:
        """Uniformly draw ``count`` distinct eligible peers without replacement.

        Fewer eligible peers than requested returns them all with the
        shortfall; an empty eligible set raises NoEligiblePeersError.
        """
        if count < 1:
            raise ValueError("count must be at least 1")
        pool = self.eligible(now)
        if exclude:
            pool = [p for p in pool if p.peer_id not in exclude]
        if not pool:
            raise NoEligiblePeersError("no attested, non-blacklisted peers available")
        pool.sort(key=lambda p: p.peer_id)  # stable base order for seeded draws
        if len(pool) <= count:
            rng.shuffle(pool)
            return RelaySample(pool, shortfall=count - len(pool))
        return RelaySample(rng.sample(pool, count))

    # -- liveness ----------------------------------------------------------

    def mark_attested(self, peer_id: str, now: float) -> None:
        """Record a completed handshake. Peers not in the view are only
        inserted when there is room; evicting a view member for an inbound
        contact would let spammers wash the view."""
        with self._lock:
            known = self._peers.get(peer_id)
            if known is not None:
                self._peers[peer_id] = replace(known, attested=True, last_seen=now)
            elif len(self._peers) < self.view_size and peer_id != self.self_id:
                self._peers[peer_id] = PeerDescriptor(
                    peer_id=peer_id, address=peer_id, attested=True, last_seen=now
                )

    def mark_rejected(self, peer_id: str) -> None:
        with self._lock:
            self._rejected.add(peer_id)
            self._peers.pop(peer_id, None)

    def blacklist(self, peer_id: str, now: float, base_s: float = BLACKLIST_BASE_S) -> float:
        """Start (or extend) a blacklist timer; repeat offenders back off
        exponentially up to a cap. Returns the blacklist duration."""
        with self._lock:
            known = self._peers.get(peer_id)
            if known is None:
                return 0.0
            strikes = known.strikes + 1
            duration = min(base_s * 2 ** (strikes - 1), BLACKLIST_CAP_S)
            self._peers[peer_id] = replace(
                known, strikes=strikes, blacklisted_until=now + duration
            )
            return duration

    def touch(self, peer_id: str, now: float) -> None:
        with self._lock:
            known = self._peers.get(peer_id)
            if known is not None:
                self._peers[peer_id] = replace(known, last_seen=now)


def load_registry(path: str) -> list[str]:
    """Read a registry file: one host:port per line, ``#`` comments."""
    addrs: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                addrs.append(line)
    return addrs
