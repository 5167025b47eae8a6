"""Simulated remote attestation and pairwise session keys.

A connecting peer is challenged for a quote: the digest of the protocol
core build it claims to run plus an ephemeral public key. If the digest is
on the local allow-list, a session key is derived from an X25519 exchange
over the ephemeral keys, bound to the challenge. Nothing here talks to a
real attestation service; the shape of the handshake is kept so the
trusted/untrusted boundary and key lifecycle match a hardware-backed
deployment.
"""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass
from threading import RLock
from typing import Callable

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

DEFAULT_BUILD_TAG = "veilsearch-core-1"
SESSION_KEY_LEN = 32


def build_digest(tag: str = DEFAULT_BUILD_TAG) -> str:
    """Digest standing in for the measured hash of the protocol core."""
    return hashlib.sha256(tag.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class AttestationRecord:
    peer_id: str
    quote_hash: str
    verified_at: float
    session_key: bytes


def _derive_key(private: X25519PrivateKey, peer_public_hex: str, challenge_hex: str) -> bytes:
    shared = private.exchange(X25519PublicKey.from_public_bytes(bytes.fromhex(peer_public_hex)))
    return HKDF(
        algorithm=hashes.SHA256(),
        length=SESSION_KEY_LEN,
        salt=bytes.fromhex(challenge_hex),
        info=b"veilsearch-session",
    ).derive(shared)


def _pub_hex(private: X25519PrivateKey) -> str:
    from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

    return private.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw).hex()


class AttestationManager:
    """Tracks handshakes in flight and established session keys.

    Thread-safe; one instance per node, living in the sealed zone.

    Session keys are direction-scoped: the handshake I initiate yields the
    key for traffic I originate towards that peer, the handshake the peer
    initiates yields the key for traffic it originates. Responses travel
    under the key that sealed the request. Keeping the two slots separate
    lets simultaneous cross-handshakes both complete instead of clobbering
    one another.
    """

    def __init__(
        self,
        self_id: str,
        digest: str | None = None,
        allowlist: set[str] | None = None,
        clock: Callable[[], float] = time.time,
    ):
        self.self_id = self_id
        self.digest = digest or build_digest()
        self.allowlist = set(allowlist) if allowlist is not None else {build_digest()}
        self._clock = clock
        self._pending: dict[str, tuple[X25519PrivateKey, str]] = {}
        self._out: dict[str, AttestationRecord] = {}
        self._in: dict[str, AttestationRecord] = {}
        self._lock = RLock()

    # -- initiator side ------------------------------------------------------

    def begin(self, peer_id: str) -> dict:
        """Open a handshake towards ``peer_id``; returns the challenge body."""
        private = X25519PrivateKey.generate()
        challenge = os.urandom(16).hex()
        with self._lock:
            self._pending[peer_id] = (private, challenge)
        return {"digest": self.digest, "pub": _pub_hex(private), "challenge": challenge}

    def finish(self, reply: dict, peer_id: str) -> AttestationRecord | None:
        """Verify the peer's quote in its reply; None means rejection."""
        with self._lock:
            pending = self._pending.pop(peer_id, None)
        if pending is None:
            return None
        private, challenge = pending
        if reply.get("challenge") != challenge:
            return None
        if reply.get("digest") not in self.allowlist:
            return None
        try:
            key = _derive_key(private, reply["pub"], challenge)
        except (KeyError, ValueError):
            return None
        record = AttestationRecord(peer_id, reply["digest"], self._clock(), key)
        with self._lock:
            self._out[peer_id] = record
        return record

    # -- responder side ------------------------------------------------------

    def respond(self, body: dict, peer_id: str) -> tuple[dict | None, AttestationRecord | None]:
        """Answer an inbound challenge.

        Returns (reply body, record). A disallowed digest yields (None,
        None): we do not hand keys to unknown builds.
        """
        if body.get("digest") not in self.allowlist:
            return None, None
        challenge = body.get("challenge")
        peer_pub = body.get("pub")
        if not isinstance(challenge, str) or not isinstance(peer_pub, str):
            return None, None
        private = X25519PrivateKey.generate()
        try:
            key = _derive_key(private, peer_pub, challenge)
        except ValueError:
            return None, None
        record = AttestationRecord(peer_id, body["digest"], self._clock(), key)
        with self._lock:
            self._in[peer_id] = record
        reply = {"digest": self.digest, "pub": _pub_hex(private), "challenge": challenge}
        return reply, record

    # -- lookups ---------------------------------------------------------------

    def send_key_for(self, peer_id: str) -> bytes | None:
        """Key for traffic this node originates towards ``peer_id``."""
        with self._lock:
            record = self._out.get(peer_id) or self._in.get(peer_id)
        return record.session_key if record else None

    def recv_keys_for(self, peer_id: str) -> list[bytes]:
        """Candidate keys for inbound traffic: the one the peer initiated,
        then ours (covers responses to requests we originated)."""
        with self._lock:
            records = (self._in.get(peer_id), self._out.get(peer_id))
        keys = [r.session_key for r in records if r is not None]
        return keys if len(set(keys)) == len(keys) else keys[:1]

    def record_for(self, peer_id: str) -> AttestationRecord | None:
        with self._lock:
            return self._out.get(peer_id) or self._in.get(peer_id)

    def has_pending(self, peer_id: str) -> bool:
        with self._lock:
            return peer_id in self._pending

    def drop(self, peer_id: str) -> None:
        with self._lock:
            self._pending.pop(peer_id, None)
            self._out.pop(peer_id, None)
            self._in.pop(peer_id, None)
