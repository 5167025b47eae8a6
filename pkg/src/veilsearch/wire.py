"""Binary wire format between nodes.

Frame layout (big-endian):

    [4-byte length][16-byte nonce][1-byte msg_type]
    [2-byte sender_id length][sender_id][sealed_payload]

The length covers everything after the length field itself. The sealed
payload is an AEAD ciphertext (tag appended) of a JSON body under the
pairwise session key; the frame header (nonce, type, sender id) rides as
associated data so it cannot be spliced onto another payload. Plaintext is
padded to fixed-size buckets before encryption so that real and fake
queries of similar length produce identical-length ciphertexts.

Handshake messages (Attest / AttestReply) carry their JSON body unsealed:
no pairwise key exists yet, which mirrors the fact that attestation quotes
are integrity-checked rather than secret.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

NONCE_LEN = 16
DEFAULT_BUCKET = 256
MAX_FRAME = 16 * 1024 * 1024


class WireError(ValueError):
    """Malformed frame or undecryptable payload."""


class MsgType(IntEnum):
    QUERY_FORWARD = 1
    QUERY_RESPONSE = 2
    SHUFFLE = 3
    SHUFFLE_REPLY = 4
    ATTEST = 5
    ATTEST_REPLY = 6


HANDSHAKE_TYPES = {MsgType.ATTEST, MsgType.ATTEST_REPLY}


@dataclass(frozen=True)
class Envelope:
    nonce: bytes
    msg_type: MsgType
    sender_id: str
    sealed_payload: bytes

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_LEN:
            raise WireError(f"nonce must be {NONCE_LEN} bytes")


def encode_envelope(env: Envelope) -> bytes:
    sid = env.sender_id.encode("utf-8")
    if len(sid) > 0xFFFF:
        raise WireError("sender_id too long")
    body = (
        env.nonce
        + bytes([env.msg_type])
        + len(sid).to_bytes(2, "big")
        + sid
        + env.sealed_payload
    )
    return len(body).to_bytes(4, "big") + body


def decode_envelope(frame: bytes) -> Envelope:
    """Parse one full frame (including the 4-byte length prefix)."""
    if len(frame) < 4:
        raise WireError("short frame")
    length = int.from_bytes(frame[:4], "big")
    if length > MAX_FRAME:
        raise WireError("frame exceeds maximum size")
    body = frame[4:]
    if len(body) != length:
        raise WireError(f"frame length mismatch: header {length}, got {len(body)}")
    if len(body) < NONCE_LEN + 3:
        raise WireError("frame body too short")
    nonce = body[:NONCE_LEN]
    try:
        msg_type = MsgType(body[NONCE_LEN])
    except ValueError as exc:
        raise WireError(f"unknown msg_type {body[NONCE_LEN]}") from exc
    sid_len = int.from_bytes(body[NONCE_LEN + 1 : NONCE_LEN + 3], "big")
    sid_end = NONCE_LEN + 3 + sid_len
    if len(body) < sid_end:
        raise WireError("truncated sender_id")
    sender_id = body[NONCE_LEN + 3 : sid_end].decode("utf-8")
    return Envelope(nonce, msg_type, sender_id, bytes(body[sid_end:]))


def pad_to_bucket(data: bytes, bucket: int = DEFAULT_BUCKET) -> bytes:
    """Length-prefix then zero-pad up to the next bucket multiple."""
    framed = len(data).to_bytes(4, "big") + data
    short = (-len(framed)) % bucket
    return framed + b"\x00" * short


def unpad(data: bytes) -> bytes:
    if len(data) < 4:
        raise WireError("padded block too short")
    n = int.from_bytes(data[:4], "big")
    if 4 + n > len(data):
        raise WireError("padding length field out of range")
    return data[4 : 4 + n]


def _aad(nonce: bytes, msg_type: MsgType, sender_id: str) -> bytes:
    return nonce + bytes([msg_type]) + sender_id.encode("utf-8")


def seal_body(
    key: bytes,
    nonce: bytes,
    msg_type: MsgType,
    sender_id: str,
    body: dict,
    bucket: int = DEFAULT_BUCKET,
) -> bytes:
    plaintext = pad_to_bucket(
        json.dumps(body, separators=(",", ":"), sort_keys=True).encode("utf-8"), bucket
    )
    return ChaCha20Poly1305(key).encrypt(nonce[:12], plaintext, _aad(nonce, msg_type, sender_id))


def open_body(key: bytes, env: Envelope) -> dict:
    """Decrypt and parse a sealed JSON body. Raises WireError on tamper."""
    try:
        plaintext = ChaCha20Poly1305(key).decrypt(
            env.nonce[:12], env.sealed_payload, _aad(env.nonce, env.msg_type, env.sender_id)
        )
    except InvalidTag as exc:
        raise WireError("authentication failed") from exc
    return json.loads(unpad(plaintext))


def plain_body(body: dict, bucket: int = DEFAULT_BUCKET) -> bytes:
    """Encode an unsealed handshake body, still bucket-padded."""
    return pad_to_bucket(
        json.dumps(body, separators=(",", ":"), sort_keys=True).encode("utf-8"), bucket
    )


def read_plain_body(env: Envelope) -> dict:
    try:
        return json.loads(unpad(env.sealed_payload))
    except (ValueError, UnicodeDecodeError) as exc:
        raise WireError("malformed handshake body") from exc
