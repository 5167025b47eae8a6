"""Loopback HTTP API consumed by the web client and the CLI.

Routes:
    POST /search            {"q": "..."} -> results + protection decision
    GET  /status            node health and counters
    GET  /config            effective config incl. topic toggles
    PUT  /config/topics     ["health", ...] -> updated config
    GET  /decisions/recent  last protection decisions for the UI

Errors: malformed JSON is 400, an unbootstrapped node answers 503. CORS is
wide open because the API binds to loopback only by default.
"""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from veilsearch.core import results_to_wire
from veilsearch.node import NotBootstrappedError, RelayNode

logger = logging.getLogger(__name__)


class ApiServer:
    def __init__(self, node: RelayNode, addr: str):
        host, port = addr.rsplit(":", 1)
        handler = _make_handler(node)
        self._httpd = ThreadingHTTPServer((host, int(port)), handler)
        self._thread: threading.Thread | None = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    def start(self) -> None:
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


def _make_handler(node: RelayNode):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # route through logging, not stderr
            logger.debug("api: " + fmt, *args)

        def _reply(self, code: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self):
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            return json.loads(raw.decode("utf-8"))

        def do_OPTIONS(self):  # CORS preflight
            self._reply(200, {})

        def do_GET(self):
            if self.path == "/status":
                self._reply(200, node.status())
            elif self.path == "/config":
                self._reply(200, node.config_view())
            elif self.path == "/decisions/recent":
                self._reply(200, {"decisions": node.recent_decisions()})
            else:
                self._reply(404, {"error": "not found"})

        def do_POST(self):
            if self.path != "/search":
                self._reply(404, {"error": "not found"})
                return
            try:
                payload = self._read_json()
                query = payload["q"]
                if not isinstance(query, str) or not query.strip():
                    raise ValueError("q must be a non-empty string")
            except (ValueError, KeyError, json.JSONDecodeError) as exc:
                self._reply(400, {"error": f"bad request: {exc}"})
                return
            try:
                outcome = node.submit_query(query)
            except NotBootstrappedError:
                self._reply(503, {"error": "node is still bootstrapping"})
                return
            except TimeoutError:
                self._reply(504, {"error": "search timed out"})
                return
            self._reply(
                200,
                {
                    "status": outcome.status,
                    "results": [
                        {"url": u, "title": t, "rank": r}
                        for u, t, r in results_to_wire(outcome.results)
                    ],
                    "decision": outcome.decision.to_dict(),
                    "degraded": outcome.degraded,
                },
            )

        def do_PUT(self):
            if self.path != "/config/topics":
                self._reply(404, {"error": "not found"})
                return
            try:
                topics = self._read_json()
                if not isinstance(topics, list) or not all(isinstance(t, str) for t in topics):
                    raise ValueError("body must be a list of topic names")
                view = node.set_topics(topics)
            except (ValueError, json.JSONDecodeError) as exc:
                self._reply(400, {"error": str(exc)})
                return
            self._reply(200, view)

    return Handler
