"""The node shell: everything that runs outside the sealed core.

The shell owns only what the local machine is trusted with: the local
user's own queries and history, the sensitivity assessment, the decision
log shown in the UI, and configuration. It never decrypts relayed
traffic; network bytes go straight into the sealed core.
"""

from __future__ import annotations

import logging
import random
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable

from veilsearch.backends import STATUS_OK
from veilsearch.config import NodeConfig
from veilsearch.core import Origin, ProtectionDecision, QueryRecord, SearchResult, UserProfile
from veilsearch.runtime import Runtime
from veilsearch.sealed import SealedConfig, SealedCore
from veilsearch.sensitivity import SensitivityConfig, decide_protection

logger = logging.getLogger(__name__)

RECENT_DECISIONS = 50
PROFILE_CAP = 1000


class NotBootstrappedError(RuntimeError):
    pass


@dataclass
class SearchOutcome:
    query_id: str
    status: str
    results: list[SearchResult]
    decision: ProtectionDecision
    degraded: bool


@dataclass
class _Inflight:
    decision: ProtectionDecision
    callback: Callable[[SearchOutcome], None]
    degraded: bool = False


class RelayNode:
    def __init__(
        self,
        config: NodeConfig,
        runtime: Runtime,
        rng: random.Random,
        backend,
        send: Callable[[str, bytes], None],
        dictionaries: dict | None = None,
    ):
        self.config = config
        self.runtime = runtime
        self.dictionaries = dict(dictionaries or {})
        enabled = (
            frozenset(config.enabled_topics) if config.enabled_topics is not None else None
        )
        self.sens_cfg = SensitivityConfig(
            k_max=config.k_max,
            smoothing_alpha=config.alpha,
            enabled_topics=enabled,
            profile_window=config.profile_window,
        )
        self.core = SealedCore(
            node_id=config.listen_addr,
            cfg=SealedConfig(
                view_size=config.view_size,
                table_capacity=config.table_capacity,
                bucket_size=config.bucket_size,
                deadline_ms=config.deadline_ms,
                replay_window_s=config.replay_window_s,
                build_tag=config.build_tag,
            ),
            runtime=runtime,
            rng=rng,
            backend=backend,
            send=send,
            on_results=self._on_results,
        )
        self._profile: deque[QueryRecord] = deque(maxlen=PROFILE_CAP)
        self._inflight: dict[str, _Inflight] = {}
        self._decisions: deque[dict] = deque(maxlen=RECENT_DECISIONS)
        self._lock = threading.RLock()
        self._bootstrapped = False

    # -- identity ----------------------------------------------------------

    @property
    def node_id(self) -> str:
        return self.core.node_id

    # -- lifecycle ----------------------------------------------------------

    def bootstrap(self, registry: list[str], seed_lines: list[str]) -> None:
        self.core.bootstrap(registry, seed_lines)
        self.core.attest_sweep()
        self._bootstrapped = True

    def is_ready(self) -> bool:
        return self._bootstrapped and self.core.is_ready()

    def on_bytes(self, data: bytes) -> None:
        self.core.on_bytes(data)

    def start_shuffle_task(self) -> None:
        period = self.config.shuffle_period_s
        if not period:
            return

        def tick() -> None:
            try:
                self.core.attest_sweep()
                self.core.shuffle_once()
            except Exception:
                logger.exception("shuffle tick failed")
            self.runtime.call_later(period, tick)

        self.runtime.call_later(period, tick)

    # -- the client path ------------------------------------------------------

    def decide(self, text: str) -> tuple[QueryRecord, ProtectionDecision]:
        record = QueryRecord.make(
            text, issued_at=int(self.runtime.now() * 1000), origin=Origin.REAL
        )
        with self._lock:
            profile = UserProfile("local", tuple(self._profile))
        decision = decide_protection(record, profile, self.dictionaries.values(), self.sens_cfg)
        return record, decision

    def submit_async(
        self,
        text: str,
        callback: Callable[[SearchOutcome], None],
        relays_override: list[str] | None = None,
        k_override: int | None = None,
    ):
        """Assess, dispatch, and return the submit receipt; the callback
        fires when the real response arrives, fails, or times out.

        ``k_override`` replaces the adaptive k (simulator baselines);
        ``relays_override`` is the simulator's single-proxy topology hook.
        """
        if not self.is_ready():
            raise NotBootstrappedError("node has no peers or no fake pool yet")
        record, decision = self.decide(text)
        k = decision.k if k_override is None else k_override
        with self._lock:
            # registration must be atomic with the dispatch: over real sockets
            # the response can beat the return of core.submit, and _on_results
            # blocks on this lock until the callback is in place
            receipt = self.core.submit(text, k, relays_override=relays_override)
            self._profile.append(record)  # only Real-origin queries enter the profile
            self._inflight[receipt.query_id] = _Inflight(
                decision=decision, callback=callback, degraded=receipt.degraded
            )
            self._decisions.append(
                {
                    "query": text,
                    **decision.to_dict(),
                    "k_requested": k,
                    "k_actual": receipt.k_actual,
                    "degraded": receipt.degraded,
                    "at_ms": record.issued_at,
                }
            )
        return receipt

    def submit_query(self, text: str, timeout_s: float | None = None) -> SearchOutcome:
        """Blocking convenience used by the HTTP API and the CLI."""
        done = threading.Event()
        slot: list[SearchOutcome] = []

        def _cb(outcome: SearchOutcome) -> None:
            slot.append(outcome)
            done.set()

        self.submit_async(text, _cb)  # receipt not needed; callback carries the outcome
        budget = timeout_s if timeout_s is not None else self.config.deadline_ms / 1000.0 * 3
        if not done.wait(budget):
            raise TimeoutError("search did not complete in time")
        return slot[0]

    def _on_results(
        self, query_id: str, status: str, results: list[SearchResult], degraded: bool
    ) -> None:
        with self._lock:
            inflight = self._inflight.pop(query_id, None)
        if inflight is None:
            return
        outcome = SearchOutcome(
            query_id=query_id,
            status=status,
            results=results if status == STATUS_OK else [],
            decision=inflight.decision,
            degraded=inflight.degraded or degraded,
        )
        try:
            inflight.callback(outcome)
        except Exception:
            logger.exception("result callback failed for %s", query_id)

    # -- introspection for the API/UI -----------------------------------------

    def status(self) -> dict:
        core = self.core.status()
        return {
            "node_id": self.node_id,
            "ready": self.is_ready(),
            "view_size": core["view_size"],
            "table_size": core["table_size"],
            "pending": core["pending"],
            "degraded_count": core["degraded"],
            "counters": core,
        }

    def config_view(self) -> dict:
        enabled = self.sens_cfg.enabled_topics
        return {
            "k_max": self.sens_cfg.k_max,
            "alpha": self.sens_cfg.smoothing_alpha,
            "view_size": self.config.view_size,
            "table_capacity": self.config.table_capacity,
            "bucket_size": self.config.bucket_size,
            "deadline_ms": self.config.deadline_ms,
            "backend": self.config.backend,
            "topics": {
                "available": sorted(self.dictionaries),
                "enabled": sorted(enabled if enabled is not None else self.dictionaries),
            },
        }

    def set_topics(self, topics: list[str]) -> dict:
        unknown = [t for t in topics if t not in self.dictionaries]
        if unknown:
            raise ValueError(f"unknown topics: {', '.join(sorted(unknown))}")
        self.sens_cfg = SensitivityConfig(
            k_max=self.sens_cfg.k_max,
            smoothing_alpha=self.sens_cfg.smoothing_alpha,
            enabled_topics=frozenset(topics),
            profile_window=self.sens_cfg.profile_window,
        )
        return self.config_view()

    def recent_decisions(self) -> list[dict]:
        with self._lock:
            return list(self._decisions)
