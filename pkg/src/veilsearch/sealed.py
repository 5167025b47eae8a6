"""The sealed protocol core.

This module models the trusted zone of a node. Everything that touches
other users' plaintext lives here: session keys, the past-query table used
as the fake pool, the peer view, and the pending-query bookkeeping. The
surrounding process (the "host") interacts with it only through the narrow
call surface of :class:`SealedCore`, mirroring how an enclave exposes a
handful of entry points:

* inbound: ``on_bytes`` (network ingress), ``submit`` (the local user's
  query plus its chosen k), bootstrap and shuffle ticks;
* outbound: the ``send`` callback (opaque ciphertext to an address), the
  ``on_results`` callback (the local user's own results only), and the
  injected ``backend`` standing in for the engine connection that a real
  deployment would terminate inside the trusted zone.

Nothing in this module logs or returns relayed query text to the host.
The real query and the fakes are dispatched as byte-identical envelope
shapes to distinct relays, and relays are never told which one they hold.

Replay protection: every envelope carries a random 128-bit identifier;
within a sliding window, a (sender, identifier) pair is accepted once.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from threading import RLock
from typing import Callable

from veilsearch.attest import AttestationManager, build_digest
from veilsearch.backends import STATUS_OK
from veilsearch.core import SearchResult, results_from_wire, results_to_wire
from veilsearch.fakestore import PastQueryTable
from veilsearch.peers import NoEligiblePeersError, PartialView
from veilsearch.runtime import Runtime
from veilsearch.wire import (
    Envelope,
    MsgType,
    WireError,
    decode_envelope,
    encode_envelope,
    plain_body,
    read_plain_body,
    open_body,
    seal_body,
)

logger = logging.getLogger(__name__)

ATTEST_TIMEOUT_S = 5.0
SHUFFLE_TIMEOUT_S = 5.0


@dataclass
class SealedConfig:
    view_size: int = 20
    table_capacity: int = 10_000
    bucket_size: int = 256
    deadline_ms: int = 5000
    replay_window_s: float = 120.0
    blacklist_base_s: float = 60.0
    build_tag: str = "veilsearch-core-1"
    allowlist: frozenset[str] | None = None  # allowed build digests

    @property
    def deadline_s(self) -> float:
        return self.deadline_ms / 1000.0


@dataclass(frozen=True)
class PendingQuery:
    """Host-visible shape of one in-flight submission (ids only)."""

    query_id: str
    real_relay: str
    fake_relays: frozenset[str]
    issued_at: float
    deadline: float


@dataclass
class SubmitReceipt:
    query_id: str
    k_requested: int
    k_actual: int
    degraded: bool


@dataclass
class _Submission:
    query_id: str
    text: str
    real_rid: str
    real_relay: str
    fake_rids: dict[str, str]  # rid -> relay id
    issued_at: float
    deadline: float
    degraded: bool
    used_relays: set[str] = field(default_factory=set)
    retried: bool = False
    done: bool = False


class SealedCore:
    def __init__(
        self,
        node_id: str,
        cfg: SealedConfig,
        runtime: Runtime,
        rng: random.Random,
        backend,
        send: Callable[[str, bytes], None],
        on_results: Callable[[str, str, list[SearchResult], bool], None],
    ):
        self.node_id = node_id
        self.cfg = cfg
        self.runtime = runtime
        self.rng = rng
        self.backend = backend
        self._send = send
        self._on_results = on_results

        digest = build_digest(cfg.build_tag)
        allow = set(cfg.allowlist) if cfg.allowlist is not None else {build_digest()}
        self.view = PartialView(node_id, view_size=cfg.view_size)
        self.table = PastQueryTable(capacity=cfg.table_capacity)
        self.attest = AttestationManager(node_id, digest=digest, allowlist=allow, clock=runtime.now)

        self._lock = RLock()
        self._subs: dict[str, _Submission] = {}
        self._rid_index: dict[str, str] = {}  # rid -> query_id
        self._seen: dict[str, dict[bytes, float]] = {}
        self._pending_shuffles: dict[str, tuple[str, list]] = {}
        self.counters: dict[str, int] = {
            "submissions": 0,
            "failed_queries": 0,
            "degraded": 0,
            "envelopes_sent": 0,
            "forwards_handled": 0,
            "relay_backend_calls": 0,
            "fake_responses_dropped": 0,
            "stale_responses_dropped": 0,
            "replay_dropped": 0,
            "decrypt_failed": 0,
            "unattested_dropped": 0,
            "malformed_dropped": 0,
            "attest_rejected": 0,
            "retries": 0,
            "shuffles": 0,
        }

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    def bootstrap(self, registry: list[str], seed_lines: list[str] | None = None) -> int:
        """Fill the view from a registry and optionally seed the fake pool."""
        count = self.view.bootstrap(registry, self.rng, self.runtime.now())
        if seed_lines:
            for line in seed_lines:
                line = line.strip()
                if line:
                    try:
                        self.table.record(line)
                    except ValueError:
                        pass
        return count

    def is_ready(self) -> bool:
        return len(self.view) > 0 and len(self.table) > 0

    def attest_sweep(self) -> int:
        """Open handshakes towards every view member we hold no key for."""
        started = 0
        for peer in self.view.snapshot():
            if peer.attested or self.attest.record_for(peer.peer_id):
                continue
            if self.attest.has_pending(peer.peer_id):
                continue
            self._begin_attest(peer.peer_id)
            started += 1
        return started

    def _begin_attest(self, peer_id: str) -> None:
        body = self.attest.begin(peer_id)
        env = Envelope(
            self._nonce(), MsgType.ATTEST, self.node_id, plain_body(body, self.cfg.bucket_size)
        )
        self._transmit(peer_id, env)
        self.runtime.call_later(ATTEST_TIMEOUT_S, lambda: self._attest_timeout(peer_id))

    def _attest_timeout(self, peer_id: str) -> None:
        if self.attest.has_pending(peer_id):
            self.attest.drop(peer_id)
            self.view.blacklist(peer_id, self.runtime.now(), self.cfg.blacklist_base_s)

    # ------------------------------------------------------------------
    # client path
    # ------------------------------------------------------------------

    def submit(self, text: str, k: int, relays_override: list[str] | None = None) -> SubmitReceipt:
        """Dispatch the real query and k fakes to distinct relays.

        ``relays_override`` bypasses relay sampling and is only used by the
        simulator's centralized-proxy baseline, where every request goes
        through one node on purpose.
        """
        now = self.runtime.now()
        with self._lock:
            fakes = self.table.sample(k, exclude=text, rng=self.rng)
            degraded = fakes.shortfall > 0
            if relays_override is not None:
                relay_ids = list(relays_override)[: len(fakes.queries) + 1]
            else:
                sample = self.view.sample_relays(len(fakes.queries) + 1, self.rng, now)
                relay_ids = [p.peer_id for p in sample.peers]
            k_actual = len(relay_ids) - 1
            fake_texts = fakes.queries[:k_actual]
            if k_actual < k:
                degraded = True

            query_id = self._fresh_id()
            real_slot = self.rng.randrange(len(relay_ids))
            real_relay = relay_ids[real_slot]
            sub = _Submission(
                query_id=query_id,
                text=text,
                real_rid="",
                real_relay=real_relay,
                fake_rids={},
                issued_at=now,
                deadline=now + self.cfg.deadline_s,
                degraded=degraded,
            )
            fake_iter = iter(fake_texts)
            for slot, relay in enumerate(relay_ids):
                rid = self._fresh_id()
                payload_text = text if slot == real_slot else next(fake_iter)
                if slot == real_slot:
                    sub.real_rid = rid
                else:
                    sub.fake_rids[rid] = relay
                self._rid_index[rid] = query_id
                self._send_forward(relay, rid, payload_text)
            sub.used_relays.add(real_relay)
            self._subs[query_id] = sub
            self.counters["submissions"] += 1
            if degraded:
                self.counters["degraded"] += 1
        real_rid = sub.real_rid
        self.runtime.call_later(self.cfg.deadline_s, lambda: self._deadline(query_id, real_rid))
        self.runtime.call_later(self.cfg.deadline_s * 3, lambda: self._gc(query_id))
        return SubmitReceipt(query_id, k, k_actual, degraded)

    def _send_forward(self, relay_id: str, rid: str, text: str) -> None:
        key = self.attest.send_key_for(relay_id)
        if key is None:
            raise NoEligiblePeersError(f"no session with relay {relay_id}")
        nonce = self._nonce()
        env = Envelope(
            nonce,
            MsgType.QUERY_FORWARD,
            self.node_id,
            seal_body(
                key, nonce, MsgType.QUERY_FORWARD, self.node_id,
                {"rid": rid, "q": text}, self.cfg.bucket_size,
            ),
        )
        self._transmit(relay_id, env)

    def _deadline(self, query_id: str, rid: str) -> None:
        with self._lock:
            sub = self._subs.get(query_id)
            if sub is None or sub.done or sub.real_rid != rid:
                return
            self.view.blacklist(sub.real_relay, self.runtime.now(), self.cfg.blacklist_base_s)
            failed = self._retry_or_mark_failed(sub)
        if failed:
            self._on_results(query_id, "error", [], failed.degraded)

    def _retry_or_mark_failed(self, sub: _Submission) -> _Submission | None:
        """Caller holds the lock. One retry through a fresh relay; when the
        budget is spent the submission is marked failed and returned so the
        caller can surface it outside the lock. Fake responses keep being
        dropped silently either way."""
        self._rid_index.pop(sub.real_rid, None)
        if not sub.retried:
            sub.retried = True
            try:
                sample = self.view.sample_relays(
                    1, self.rng, self.runtime.now(), exclude=sub.used_relays
                )
                relay = sample.peers[0].peer_id
                rid = self._fresh_id()
                sub.real_rid = rid
                sub.real_relay = relay
                sub.used_relays.add(relay)
                self._rid_index[rid] = sub.query_id
                self._send_forward(relay, rid, sub.text)
                self.counters["retries"] += 1
                self.runtime.call_later(
                    self.cfg.deadline_s, lambda: self._deadline(sub.query_id, rid)
                )
                return None
            except NoEligiblePeersError:
                pass
        sub.done = True
        self.counters["failed_queries"] += 1
        return sub

    def _gc(self, query_id: str) -> None:
        failed = None
        with self._lock:
            sub = self._subs.pop(query_id, None)
            if sub is None:
                return
            self._rid_index.pop(sub.real_rid, None)
            for rid in sub.fake_rids:
                self._rid_index.pop(rid, None)
            if not sub.done:
                sub.done = True
                self.counters["failed_queries"] += 1
                failed = sub
        if failed is not None:
            self._on_results(query_id, "error", [], failed.degraded)

    def pending_queries(self) -> list[PendingQuery]:
        with self._lock:
            return [
                PendingQuery(
                    query_id=s.query_id,
                    real_relay=s.real_relay,
                    fake_relays=frozenset(s.fake_rids.values()),
                    issued_at=s.issued_at,
                    deadline=s.deadline,
                )
                for s in self._subs.values()
                if not s.done
            ]

    # ------------------------------------------------------------------
    # network ingress
    # ------------------------------------------------------------------

    def on_bytes(self, data: bytes) -> None:
        try:
            env = decode_envelope(data)
        except WireError:
            self.counters["malformed_dropped"] += 1
            return
        if env.sender_id == self.node_id:
            return
        if self._replayed(env):
            self.counters["replay_dropped"] += 1
            return
        handler = {
            MsgType.ATTEST: self._handle_attest,
            MsgType.ATTEST_REPLY: self._handle_attest_reply,
            MsgType.QUERY_FORWARD: self._handle_forward,
            MsgType.QUERY_RESPONSE: self._handle_response,
            MsgType.SHUFFLE: self._handle_shuffle,
            MsgType.SHUFFLE_REPLY: self._handle_shuffle_reply,
        }[env.msg_type]
        handler(env)

    def _replayed(self, env: Envelope) -> bool:
        now = self.runtime.now()
        cutoff = now - self.cfg.replay_window_s
        with self._lock:
            seen = self._seen.setdefault(env.sender_id, {})
            if env.nonce in seen:
                return True
            for nonce in [n for n, t in seen.items() if t < cutoff]:
                del seen[nonce]
            seen[env.nonce] = now
            return False

    # -- handlers -------------------------------------------------------

    def _handle_attest(self, env: Envelope) -> None:
        try:
            body = read_plain_body(env)
        except WireError:
            self.counters["malformed_dropped"] += 1
            return
        reply, record = self.attest.respond(body, env.sender_id)
        if reply is None:
            self.counters["attest_rejected"] += 1
            self.view.mark_rejected(env.sender_id)
            return
        self.view.mark_attested(env.sender_id, self.runtime.now())
        out = Envelope(
            self._nonce(),
            MsgType.ATTEST_REPLY,
            self.node_id,
            plain_body(reply, self.cfg.bucket_size),
        )
        self._transmit(env.sender_id, out)

    def _handle_attest_reply(self, env: Envelope) -> None:
        try:
            body = read_plain_body(env)
        except WireError:
            self.counters["malformed_dropped"] += 1
            return
        record = self.attest.finish(body, env.sender_id)
        if record is None:
            self.counters["attest_rejected"] += 1
            self.view.mark_rejected(env.sender_id)
            return
        self.view.mark_attested(env.sender_id, self.runtime.now())

    def _open_any(self, env: Envelope) -> tuple[bytes, dict] | None:
        """Decrypt with any live session key for the sender; counts drops."""
        keys = self.attest.recv_keys_for(env.sender_id)
        if not keys:
            self.counters["unattested_dropped"] += 1
            return None
        for key in keys:
            try:
                return key, open_body(key, env)
            except WireError:
                continue
        self.counters["decrypt_failed"] += 1
        return None

    def _handle_forward(self, env: Envelope) -> None:
        opened = self._open_any(env)
        if opened is None:
            return
        key, body = opened
        rid = body.get("rid")
        text = body.get("q")
        if not isinstance(rid, str) or not isinstance(text, str):
            self.counters["malformed_dropped"] += 1
            return
        try:
            self.table.record(text)
        except ValueError:
            self.counters["malformed_dropped"] += 1
            return
        self.counters["forwards_handled"] += 1
        response = self.backend.search(self.node_id, text)
        self.counters["relay_backend_calls"] += 1
        nonce = self._nonce()
        reply = Envelope(
            nonce,
            MsgType.QUERY_RESPONSE,
            self.node_id,
            seal_body(
                key, nonce, MsgType.QUERY_RESPONSE, self.node_id,
                {
                    "rid": rid,
                    "status": response.status,
                    "results": results_to_wire(response.results),
                },
                self.cfg.bucket_size,
            ),
        )
        dest = env.sender_id
        if response.latency_s > 0:
            data = encode_envelope(reply)
            self.runtime.call_later(response.latency_s, lambda: self._send_raw(dest, data))
        else:
            self._transmit(dest, reply)

    def _handle_response(self, env: Envelope) -> None:
        opened = self._open_any(env)
        if opened is None:
            return
        _, body = opened
        rid = body.get("rid")
        deliver: tuple[str, list[SearchResult], bool] | None = None
        failed: _Submission | None = None
        with self._lock:
            query_id = self._rid_index.pop(rid, None)
            sub = self._subs.get(query_id) if query_id else None
            if sub is None:
                self.counters["stale_responses_dropped"] += 1
                return
            if rid == sub.real_rid:
                if sub.done:
                    return
                if body.get("status") == STATUS_OK:
                    sub.done = True
                    self.view.touch(env.sender_id, self.runtime.now())
                    deliver = (sub.query_id, results_from_wire(body.get("results", [])), sub.degraded)
                else:
                    # the relay answered but the engine refused; treat like a
                    # dead path and spend the remaining retry budget
                    failed = self._retry_or_mark_failed(sub)
            else:
                sub.fake_rids.pop(rid, None)
                self.counters["fake_responses_dropped"] += 1
        if deliver is not None:
            self._on_results(deliver[0], STATUS_OK, deliver[1], deliver[2])
        elif failed is not None:
            self._on_results(failed.query_id, "error", [], failed.degraded)

    def _handle_shuffle(self, env: Envelope) -> None:
        opened = self._open_any(env)
        if opened is None:
            return
        key, body = opened
        now = self.runtime.now()
        received = _entries_from_wire(body.get("entries", []))
        reply_offer = self.view.make_offer(self.rng, now)
        self.view.merge(received, self.rng, now, sent=reply_offer)
        nonce = self._nonce()
        out = Envelope(
            nonce,
            MsgType.SHUFFLE_REPLY,
            self.node_id,
            seal_body(
                key, nonce, MsgType.SHUFFLE_REPLY, self.node_id,
                {"sid": body.get("sid"), "entries": _entries_to_wire(reply_offer)},
                self.cfg.bucket_size,
            ),
        )
        self._transmit(env.sender_id, out)

    def _handle_shuffle_reply(self, env: Envelope) -> None:
        opened = self._open_any(env)
        if opened is None:
            return
        _, body = opened
        with self._lock:
            pending = self._pending_shuffles.pop(body.get("sid"), None)
        if pending is None:
            return
        _, sent_offer = pending
        now = self.runtime.now()
        self.view.merge(_entries_from_wire(body.get("entries", [])), self.rng, now, sent=sent_offer)
        self.view.touch(env.sender_id, now)

    # ------------------------------------------------------------------
    # shuffling
    # ------------------------------------------------------------------

    def shuffle_once(self) -> bool:
        """One proactive view exchange with a random attested peer."""
        now = self.runtime.now()
        partners = [p for p in self.view.eligible(now)]
        if not partners:
            return False
        partners.sort(key=lambda p: p.peer_id)
        partner = self.rng.choice(partners)
        key = self.attest.send_key_for(partner.peer_id)
        if key is None:
            return False
        offer = self.view.make_offer(self.rng, now)
        sid = self._fresh_id()
        with self._lock:
            self._pending_shuffles[sid] = (partner.peer_id, offer)
        nonce = self._nonce()
        env = Envelope(
            nonce,
            MsgType.SHUFFLE,
            self.node_id,
            seal_body(
                key, nonce, MsgType.SHUFFLE, self.node_id,
                {"sid": sid, "entries": _entries_to_wire(offer)},
                self.cfg.bucket_size,
            ),
        )
        self._transmit(partner.peer_id, env)
        self.counters["shuffles"] += 1
        self.runtime.call_later(SHUFFLE_TIMEOUT_S, lambda: self._shuffle_timeout(sid))
        return True

    def _shuffle_timeout(self, sid: str) -> None:
        with self._lock:
            pending = self._pending_shuffles.pop(sid, None)
        if pending is not None:
            self.view.blacklist(pending[0], self.runtime.now(), self.cfg.blacklist_base_s)

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def _transmit(self, dest: str, env: Envelope) -> None:
        self._send_raw(dest, encode_envelope(env))

    def _send_raw(self, dest: str, data: bytes) -> None:
        self.counters["envelopes_sent"] += 1
        self._send(dest, data)

    def _nonce(self) -> bytes:
        return self.rng.getrandbits(128).to_bytes(16, "big")

    def _fresh_id(self) -> str:
        return self.rng.getrandbits(64).to_bytes(8, "big").hex()

    def status(self) -> dict:
        with self._lock:
            pending = sum(1 for s in self._subs.values() if not s.done)
            counters = dict(self.counters)
        return {
            "view_size": len(self.view),
            "eligible_peers": len(self.view.eligible(self.runtime.now())),
            "table_size": len(self.table),
            "pending": pending,
            **counters,
        }


def _entries_to_wire(entries) -> list[list]:
    return [[p.peer_id, p.address, p.last_seen] for p in entries]


def _entries_from_wire(rows: list[list]):
    from veilsearch.peers import PeerDescriptor

    out = []
    for row in rows:
        try:
            out.append(PeerDescriptor(peer_id=str(row[0]), address=str(row[1]), last_seen=float(row[2])))
        except (IndexError, TypeError, ValueError):
            continue
    return out
