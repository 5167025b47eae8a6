"""TCP transport for live deployments.

Frames are already length-prefixed by the wire format, so the transport is
a thin reader loop plus fire-and-forget outbound connections. Sender
identity comes from inside the envelope (and is what session keys are
bound to), not from the socket peer address.
"""

from __future__ import annotations

import logging
import socket
import threading
from typing import Callable

logger = logging.getLogger(__name__)

CONNECT_TIMEOUT_S = 3.0
MAX_FRAME = 16 * 1024 * 1024


def _recv_exact(conn: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class TcpTransport:
    def __init__(self, listen_addr: str, on_bytes: Callable[[bytes], None]):
        host, port = listen_addr.rsplit(":", 1)
        self._on_bytes = on_bytes
        self._server = socket.create_server((host, int(port)))
        self._stopping = threading.Event()
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)

    @property
    def port(self) -> int:
        return self._server.getsockname()[1]

    def start(self) -> None:
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket) -> None:
        with conn:
            while not self._stopping.is_set():
                header = _recv_exact(conn, 4)
                if header is None:
                    return
                length = int.from_bytes(header, "big")
                if length > MAX_FRAME:
                    logger.warning("oversized frame rejected (%d bytes)", length)
                    return
                body = _recv_exact(conn, length)
                if body is None:
                    return
                try:
                    self._on_bytes(header + body)
                except Exception:
                    logger.exception("inbound frame handler failed")

    def send(self, dest_addr: str, data: bytes) -> None:
        """One short-lived connection per frame; failures are dropped and
        left to the protocol's timeout machinery."""
        host, port = dest_addr.rsplit(":", 1)
        try:
            with socket.create_connection((host, int(port)), timeout=CONNECT_TIMEOUT_S) as conn:
                conn.sendall(data)
        except OSError as exc:
            logger.debug("send to %s failed: %s", dest_addr, exc)

    def close(self) -> None:
        self._stopping.set()
        try:
            self._server.close()
        except OSError:
            pass
