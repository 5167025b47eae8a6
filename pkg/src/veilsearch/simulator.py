"""Closed-world multi-node simulation and the in-process throughput bench.

A single logical clock drives an ordered event queue; node handlers run as
event callbacks, message delivery and engine answers are delayed by a
parametric latency model, and every random draw comes from seeded
generators, so a config (seed included) fully determines the report.

The throughput bench measures real per-request service times on the relay
path with the engine stubbed out, then derives the latency distribution at
each offered rate from the standard single-server waiting-time recursion
over that measured trace. Reusing one trace across rates keeps the curve
honest about the work performed and monotone by construction.
"""

from __future__ import annotations

import heapq
import json
import random
import time
from dataclasses import asdict, dataclass, field
from statistics import mean, median
from typing import Callable

from veilsearch.backends import (
    MockBackend,
    MockCorpus,
    RateLimiter,
    STATUS_OK,
    StubBackend,
    mock_search,
)
from veilsearch.config import NodeConfig
from veilsearch.core import normalize, results_to_wire
from veilsearch.evaluation import correctness_completeness
from veilsearch.node import RelayNode
from veilsearch.runtime import Runtime
from veilsearch.sealed import SealedConfig, SealedCore
from veilsearch.wire import Envelope, MsgType, encode_envelope, seal_body


# ---------------------------------------------------------------------------
# discrete-event core
# ---------------------------------------------------------------------------


class EventLoop:
    def __init__(self) -> None:
        self.now = 0.0
        self._seq = 0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []

    def schedule(self, delay_s: float, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (self.now + max(delay_s, 0.0), self._seq, fn))

    def run(self) -> int:
        """Drain the queue; returns the number of events processed."""
        processed = 0
        while self._queue:
            t, _, fn = heapq.heappop(self._queue)
            self.now = t
            fn()
            processed += 1
        return processed


class SimRuntime(Runtime):
    def __init__(self, loop: EventLoop):
        self._loop = loop

    def now(self) -> float:
        return self._loop.now

    def call_later(self, delay_s: float, fn: Callable[[], None]) -> None:
        self._loop.schedule(delay_s, fn)


@dataclass
class LatencyModel:
    hop_base_ms: float = 20.0
    hop_jitter_ms: float = 10.0
    engine_base_ms: float = 120.0
    engine_jitter_ms: float = 40.0

    def hop_s(self, rng: random.Random) -> float:
        return max(0.0, self.hop_base_ms + rng.uniform(-1, 1) * self.hop_jitter_ms) / 1000.0

    def engine_s(self, rng: random.Random) -> float:
        return (
            max(0.0, self.engine_base_ms + rng.uniform(-1, 1) * self.engine_jitter_ms) / 1000.0
        )


class SimNetwork:
    """Delivers frames between registered nodes with per-hop latency."""

    def __init__(self, loop: EventLoop, latency: LatencyModel, rng: random.Random):
        self._loop = loop
        self._latency = latency
        self._rng = rng
        self._nodes: dict[str, Callable[[bytes], None]] = {}

    def register(self, addr: str, on_bytes: Callable[[bytes], None]) -> None:
        self._nodes[addr] = on_bytes

    def unregister(self, addr: str) -> None:
        """Drop a node from the network; frames to it are lost (crash model)."""
        self._nodes.pop(addr, None)

    def send(self, dest: str, data: bytes) -> None:
        sink = self._nodes.get(dest)
        if sink is None:
            return  # dead address: the frame is lost, timers handle it
        self._loop.schedule(self._latency.hop_s(self._rng), lambda: sink(data))


# ---------------------------------------------------------------------------
# simulation config / report
# ---------------------------------------------------------------------------


@dataclass
class SimConfig:
    node_count: int = 20
    seed: int = 0
    duration_hours: float = 0.25
    queries_per_user_per_hour: float = 31.23
    total_queries: int | None = None  # overrides the rate when set
    k_policy: str = "adaptive"  # adaptive | none | fixed:<n>
    k_max: int = 7
    alpha: float = 0.5
    view_size: int | None = None  # None -> min(20, node_count - 1)
    topology: str = "uniform"  # uniform | star
    rate_threshold: int | None = None
    latency: LatencyModel = field(default_factory=LatencyModel)
    bucket_size: int = 256
    deadline_ms: int = 5000
    shuffle_period_s: float | None = None  # periodic shuffling off by default
    vocab_size: int = 120
    corpus_docs: int = 150
    seed_pool: int = 60
    verify_accuracy: bool = True

    def __post_init__(self) -> None:
        if self.node_count < 2:
            raise ValueError("need at least two nodes")
        if self.topology not in ("uniform", "star"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.k_policy not in ("adaptive", "none") and not self.k_policy.startswith("fixed:"):
            raise ValueError(f"unknown k_policy {self.k_policy!r}")
        if self.topology == "star" and self.node_count < 3:
            raise ValueError("star topology needs a proxy plus at least two users")


@dataclass
class SimReport:
    config: dict
    queries_submitted: int
    queries_completed: int
    queries_failed: int
    degraded: int
    accuracy_mismatches: int
    correctness: float | None  # mean over verified queries; null when unverified
    completeness: float | None
    latency_ms: dict
    k_histogram: dict
    mean_k: float
    per_node_backend_calls: dict
    load_mean: float
    load_max: float
    load_ratio: float
    mean_per_node_req_per_hour: float
    closed_form_req_per_hour: float
    blocked_nodes: list
    backend_attempts: int
    forwards_sent: int
    retries: int
    conservation_ok: bool

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _percentiles(samples: list[float]) -> dict:
    if not samples:
        return {"count": 0, "mean": 0.0, "p50": 0.0, "p95": 0.0, "p99": 0.0, "max": 0.0}
    ordered = sorted(samples)

    def pct(p: float) -> float:
        idx = min(len(ordered) - 1, max(0, int(round(p / 100.0 * (len(ordered) - 1)))))
        return ordered[idx]

    return {
        "count": len(ordered),
        "mean": mean(ordered),
        "p50": pct(50),
        "p95": pct(95),
        "p99": pct(99),
        "max": ordered[-1],
    }


# ---------------------------------------------------------------------------
# run_simulation
# ---------------------------------------------------------------------------


def _policy_k(policy: str, k_max: int) -> int | None:
    """Fixed k for the policy, or None when the node decides adaptively."""
    if policy == "none":
        return 0
    if policy.startswith("fixed:"):
        return int(policy.split(":", 1)[1])
    return None


def run_simulation(cfg: SimConfig) -> SimReport:
    master = random.Random(cfg.seed)
    loop = EventLoop()
    runtime = SimRuntime(loop)
    net = SimNetwork(loop, cfg.latency, random.Random(f"{cfg.seed}:net"))

    vocab = [f"term{i:03d}" for i in range(cfg.vocab_size)]
    corpus = MockCorpus.synthetic(random.Random(f"{cfg.seed}:corpus"), cfg.corpus_docs, vocab)
    engine_rng = random.Random(f"{cfg.seed}:engine")
    limiter = RateLimiter(threshold=cfg.rate_threshold, clock=runtime.now)
    backend = MockBackend(corpus, limiter, latency=lambda: cfg.latency.engine_s(engine_rng))

    seed_lines = [
        " ".join(master.sample(vocab, master.randint(2, 4))) for _ in range(cfg.seed_pool)
    ]

    addrs = [f"sim://{i:03d}" for i in range(cfg.node_count)]
    view_size = cfg.view_size if cfg.view_size is not None else min(20, cfg.node_count - 1)
    nodes: dict[str, RelayNode] = {}
    for i, addr in enumerate(addrs):
        node_cfg = NodeConfig(
            listen_addr=addr,
            api_addr="",
            k_max=cfg.k_max,
            alpha=cfg.alpha,
            view_size=view_size,
            bucket_size=cfg.bucket_size,
            deadline_ms=cfg.deadline_ms,
            shuffle_period_s=None,
        )
        node = RelayNode(
            node_cfg,
            runtime,
            random.Random(f"{cfg.seed}:node:{i}"),
            backend,
            send=net.send,
        )
        net.register(addr, node.on_bytes)
        nodes[addr] = node

    # -- bootstrap + attestation warmup (simulated handshakes over the wire)
    star_center = addrs[0] if cfg.topology == "star" else None
    for i, addr in enumerate(addrs):
        if star_center is None:
            registry = [a for a in addrs if a != addr]
        elif addr == star_center:
            registry = [addrs[1]]
        else:
            registry = [star_center]
        nodes[addr].bootstrap(registry, seed_lines)
    loop.run()  # drain handshakes before the workload starts
    loop.now = 0.0  # workload clock starts after warmup

    # -- schedule the workload
    duration_s = cfg.duration_hours * 3600.0
    fixed_k = _policy_k(cfg.k_policy, cfg.k_max)
    users = [a for a in addrs if a != star_center]
    sched_rng = random.Random(f"{cfg.seed}:workload")

    per_user: dict[str, int] = {}
    if cfg.total_queries is not None:
        base, extra = divmod(cfg.total_queries, len(users))
        for i, addr in enumerate(users):
            per_user[addr] = base + (1 if i < extra else 0)
    else:
        for addr in users:
            per_user[addr] = int(round(cfg.queries_per_user_per_hour * cfg.duration_hours))

    stats = {
        "submitted": 0,
        "completed": 0,
        "failed": 0,
        "degraded": 0,
        "mismatches": 0,
        "sum_k_actual": 0,
        "accuracy_samples": 0,
        "sum_correctness": 0.0,
        "sum_completeness": 0.0,
    }
    latencies: list[float] = []
    k_hist: dict[int, int] = {}

    def make_submit(addr: str, text: str) -> Callable[[], None]:
        node = nodes[addr]

        def submit() -> None:
            start = loop.now
            expected = (
                results_to_wire(mock_search(corpus, normalize(text)))
                if cfg.verify_accuracy
                else None
            )

            def on_outcome(outcome) -> None:
                if outcome.status == STATUS_OK:
                    stats["completed"] += 1
                    latencies.append((loop.now - start) * 1000.0)
                    if expected is not None:
                        got = results_to_wire(outcome.results)
                        if got != expected:
                            stats["mismatches"] += 1
                        c, comp = correctness_completeness(
                            {row[0] for row in expected}, {row[0] for row in got}
                        )
                        stats["accuracy_samples"] += 1
                        stats["sum_correctness"] += c
                        stats["sum_completeness"] += comp
                else:
                    stats["failed"] += 1

            override = None
            if star_center is not None:
                override = [star_center] * ((fixed_k if fixed_k is not None else cfg.k_max) + 1)
            receipt = node.submit_async(
                text, on_outcome, relays_override=override, k_override=fixed_k
            )
            stats["submitted"] += 1
            stats["sum_k_actual"] += receipt.k_actual
            k_hist[receipt.k_actual] = k_hist.get(receipt.k_actual, 0) + 1
            if receipt.degraded:
                stats["degraded"] += 1

        return submit

    for addr in users:
        for _ in range(per_user[addr]):
            text = " ".join(sched_rng.sample(vocab, sched_rng.randint(2, 4)))
            loop.schedule(sched_rng.uniform(0.0, duration_s), make_submit(addr, text))

    loop.run()

    # -- collect
    per_node_calls = {addr: backend.attempts.get(addr, 0) for addr in addrs}
    relay_loads = list(per_node_calls.values())
    load_mean = mean(relay_loads) if relay_loads else 0.0
    load_max = max(relay_loads) if relay_loads else 0.0
    retries = sum(n.core.counters["retries"] for n in nodes.values())
    forwards = stats["sum_k_actual"] + stats["submitted"] + retries
    attempts = backend.total_attempts()
    mean_per_node_rate = (
        load_mean / cfg.duration_hours if cfg.duration_hours > 0 else 0.0
    )
    closed_form = (
        len(users)
        * cfg.queries_per_user_per_hour
        * ((fixed_k if fixed_k is not None else cfg.k_max) + 1)
        / cfg.node_count
    )
    total_k = sum(k * c for k, c in k_hist.items())

    completed = stats["completed"]
    samples = stats["accuracy_samples"]
    return SimReport(
        config=asdict(cfg),
        queries_submitted=stats["submitted"],
        queries_completed=completed,
        queries_failed=stats["failed"],
        degraded=stats["degraded"],
        accuracy_mismatches=stats["mismatches"],
        correctness=(stats["sum_correctness"] / samples) if samples else None,
        completeness=(stats["sum_completeness"] / samples) if samples else None,
        latency_ms=_percentiles(latencies),
        k_histogram={str(k): c for k, c in sorted(k_hist.items())},
        mean_k=(total_k / stats["submitted"]) if stats["submitted"] else 0.0,
        per_node_backend_calls=per_node_calls,
        load_mean=load_mean,
        load_max=load_max,
        load_ratio=(load_max / load_mean) if load_mean else 0.0,
        mean_per_node_req_per_hour=mean_per_node_rate,
        closed_form_req_per_hour=closed_form,
        blocked_nodes=sorted(limiter.blocked_sources()),
        backend_attempts=attempts,
        forwards_sent=forwards,
        retries=retries,
        conservation_ok=(attempts == forwards),
    )


# ---------------------------------------------------------------------------
# throughput bench
# ---------------------------------------------------------------------------


@dataclass
class BenchReport:
    points: list[dict]
    service_us_mean: float
    service_us_p99: float
    knee_rate: float | None
    requests: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


class _WallRuntime:
    """Real clock, timers discarded: the bench never waits on them."""

    def now(self) -> float:
        return time.time()

    def call_later(self, delay_s: float, fn: Callable[[], None]) -> None:
        pass


def run_throughput_bench(
    rates: list[float], n_requests: int = 3000, bucket: int = 256, seed: int = 7
) -> BenchReport:
    """Measure the relay path and derive latency at each offered rate.

    The relay's work per request is real: frame decode, replay check, AEAD
    open, fake-table insert, stub engine call, AEAD seal of the response.
    Offered load is then replayed through the waiting-time recursion
    W[i+1] = max(0, W[i] + S[i] - 1/rate), latency[i] = W[i] + S[i].
    """
    rng = random.Random(seed)
    runtime = _WallRuntime()
    outbox: list[tuple[str, bytes]] = []

    def client_send(dest: str, data: bytes) -> None:
        outbox.append((dest, data))

    client = SealedCore(
        "bench://client",
        SealedConfig(bucket_size=bucket, table_capacity=n_requests + 10),
        runtime,
        rng,
        StubBackend(),
        client_send,
        lambda *a: None,
    )
    relay_responses: list[bytes] = []
    relay = SealedCore(
        "bench://relay",
        SealedConfig(bucket_size=bucket, table_capacity=n_requests + 10),
        runtime,
        random.Random(seed + 1),
        StubBackend(),
        lambda dest, data: relay_responses.append(data),
        lambda *a: None,
    )

    # handshake over the in-memory wire
    client.view.bootstrap(["bench://relay"], rng)
    client.attest_sweep()
    assert outbox, "attestation challenge not sent"
    relay.on_bytes(outbox.pop()[1])
    assert relay_responses, "attestation reply not sent"
    client.on_bytes(relay_responses.pop())
    key = client.attest.send_key_for("bench://relay")
    assert key is not None, "bench handshake failed"

    frames = []
    for i in range(n_requests):
        nonce = rng.getrandbits(128).to_bytes(16, "big")
        body = {"rid": f"{i:016x}", "q": f"bench query {i} terms alpha beta"}
        env = Envelope(
            nonce,
            MsgType.QUERY_FORWARD,
            "bench://client",
            seal_body(key, nonce, MsgType.QUERY_FORWARD, "bench://client", body, bucket),
        )
        frames.append(encode_envelope(env))

    services: list[float] = []
    for frame in frames:
        t0 = time.perf_counter()
        relay.on_bytes(frame)
        services.append(time.perf_counter() - t0)
    assert relay.counters["forwards_handled"] == n_requests
    assert len(relay_responses) == n_requests

    points = []
    knee = None
    for rate in sorted(rates):
        gap = 1.0 / rate
        wait = 0.0
        lats = []
        for s in services:
            lats.append(wait + s)
            wait = max(0.0, wait + s - gap)
        med = median(lats) * 1000.0
        p99 = sorted(lats)[min(len(lats) - 1, int(round(0.99 * (len(lats) - 1))))] * 1000.0
        points.append({"rate": rate, "median_ms": med, "p99_ms": p99})
        if knee is None and med > 1000.0:
            knee = rate

    ordered = sorted(services)
    return BenchReport(
        points=points,
        service_us_mean=mean(services) * 1e6,
        service_us_p99=ordered[min(len(ordered) - 1, int(round(0.99 * (len(ordered) - 1))))]
        * 1e6,
        knee_rate=knee,
        requests=n_requests,
    )
