import logging
import random
from types import SimpleNamespace

import pytest

from veilsearch.backends import MockBackend, MockCorpus, RateLimiter, mock_search
from veilsearch.config import NodeConfig
from veilsearch.core import normalize, results_to_wire
from veilsearch.node import NotBootstrappedError, RelayNode
from veilsearch.simulator import EventLoop, LatencyModel, SimNetwork, SimRuntime
from veilsearch.wire import MsgType, decode_envelope

VOCAB = [f"word{i:02d}" for i in range(40)]
SEEDS = [f"seed query {i} {VOCAB[i % len(VOCAB)]}" for i in range(30)]


def build_cluster(n=4, seed=0, latency=None, threshold=None, k_max=7):
    loop = EventLoop()
    runtime = SimRuntime(loop)
    net = SimNetwork(loop, latency or LatencyModel(0, 0, 0, 0), random.Random(f"{seed}:net"))
    corpus = MockCorpus.synthetic(random.Random(f"{seed}:corpus"), 40, VOCAB)
    backend = MockBackend(corpus, RateLimiter(threshold, clock=runtime.now))
    addrs = [f"sim://{i}" for i in range(n)]
    taps = []  # (src, dest, frame)
    nodes = {}
    for i, addr in enumerate(addrs):
        def make_send(src):
            def send(dest, data):
                taps.append((src, dest, data))
                net.send(dest, data)

            return send

        cfg = NodeConfig(listen_addr=addr, view_size=min(20, n - 1), shuffle_period_s=None)
        cfg.k_max = k_max
        node = RelayNode(cfg, runtime, random.Random(f"{seed}:n{i}"), backend, make_send(addr))
        net.register(addr, node.on_bytes)
        nodes[addr] = node
    for addr in addrs:
        nodes[addr].bootstrap([a for a in addrs if a != addr], SEEDS)
    loop.run()
    return SimpleNamespace(
        loop=loop, net=net, nodes=nodes, addrs=addrs, backend=backend, corpus=corpus, taps=taps
    )


def submit_and_run(cluster, addr, text, k_override=None, relays_override=None):
    outcomes = []
    cluster.nodes[addr].submit_async(
        text, outcomes.append, relays_override=relays_override, k_override=k_override
    )
    cluster.loop.run()
    assert len(outcomes) == 1
    return outcomes[0]


def test_bootstrap_attests_view():
    c = build_cluster(4)
    for node in c.nodes.values():
        assert node.is_ready()
        eligible = node.core.view.eligible(c.loop.now)
        assert len(eligible) == 3


def test_submit_k0_single_envelope():
    c = build_cluster(4)
    before = c.backend.total_attempts()
    outcome = submit_and_run(c, c.addrs[0], "word00 word01", k_override=0)
    assert outcome.status == "ok"
    assert c.backend.total_attempts() - before == 1
    expected = mock_search(c.corpus, normalize("word00 word01"))
    assert results_to_wire(outcome.results) == results_to_wire(expected)


def test_submit_k3_four_distinct_relays_and_exact_results():
    c = build_cluster(8)
    text = "word05 word06 word07"
    before = dict(c.backend.attempts)
    outcome = submit_and_run(c, c.addrs[0], text, k_override=3)
    assert outcome.status == "ok"
    used = {
        src
        for src, count in c.backend.attempts.items()
        if count > before.get(src, 0)
    }
    assert len(used) == 4  # four distinct relays each called the engine once
    assert c.addrs[0] not in used  # never relays its own submission
    expected = mock_search(c.corpus, normalize(text))
    assert results_to_wire(outcome.results) == results_to_wire(expected)


def test_adaptive_submission_uses_decision():
    c = build_cluster(5)
    node = c.nodes[c.addrs[0]]
    outcome = submit_and_run(c, c.addrs[0], "word00 word01 word02")
    assert outcome.status == "ok"
    assert outcome.decision.k == 0  # empty profile, no dictionaries
    entry = node.recent_decisions()[-1]
    assert entry["k"] == 0 and entry["k_actual"] == 0


def test_pending_query_shape_during_flight():
    c = build_cluster(8, latency=LatencyModel(20, 0, 0, 0))
    node = c.nodes[c.addrs[0]]
    outcomes = []
    node.submit_async("word01 word02", outcomes.append, k_override=3)
    pending = node.core.pending_queries()
    assert len(pending) == 1
    p = pending[0]
    assert p.real_relay not in p.fake_relays
    assert len(p.fake_relays) == 3
    assert p.deadline > p.issued_at
    c.loop.run()
    assert outcomes and outcomes[0].status == "ok"


def test_fake_shortfall_degrades_but_succeeds():
    c = build_cluster(8)
    node = c.nodes[c.addrs[0]]
    node.core.table._entries.clear()
    node.core.table.record("the only fake available")
    outcome = submit_and_run(c, c.addrs[0], "word01 word02", k_override=5)
    assert outcome.status == "ok"
    assert outcome.degraded


def test_relay_shortfall_degrades_but_succeeds():
    c = build_cluster(3)  # only 2 peers available per node
    outcome = submit_and_run(c, c.addrs[0], "word01 word02", k_override=5)
    assert outcome.status == "ok"
    assert outcome.degraded
    receipt_k = c.nodes[c.addrs[0]].recent_decisions()[-1]["k_actual"]
    assert receipt_k == 1  # 2 relays -> 1 fake + the real query


def test_replay_never_doubles_backend_calls():
    c = build_cluster(4)
    submit_and_run(c, c.addrs[0], "word00 word09", k_override=2)
    forwards = [
        (src, dest, frame)
        for (src, dest, frame) in c.taps
        if decode_envelope(frame).msg_type == MsgType.QUERY_FORWARD
    ]
    assert len(forwards) == 3
    before = c.backend.total_attempts()
    src, dest, frame = forwards[0]
    for _ in range(1000):
        c.nodes[dest].on_bytes(frame)
    c.loop.run()
    assert c.backend.total_attempts() == before
    assert c.nodes[dest].core.counters["replay_dropped"] == 1000


def test_unattested_sender_never_reaches_backend():
    c = build_cluster(4)
    # a foreign node with a valid build but no handshake with the target
    loop2 = EventLoop()
    outsider = RelayNode(
        NodeConfig(listen_addr="sim://evil", view_size=3, shuffle_period_s=None),
        SimRuntime(loop2),
        random.Random(99),
        c.backend,
        send=lambda dest, data: None,
    )
    key = bytes(32)
    from veilsearch.wire import Envelope, seal_body

    nonce = bytes(16)
    env = Envelope(
        nonce,
        MsgType.QUERY_FORWARD,
        "sim://evil",
        seal_body(key, nonce, MsgType.QUERY_FORWARD, "sim://evil", {"rid": "r", "q": "spy"}),
    )
    target = c.nodes[c.addrs[1]]
    before = c.backend.total_attempts()
    from veilsearch.wire import encode_envelope

    target.on_bytes(encode_envelope(env))
    assert c.backend.total_attempts() == before
    assert target.core.counters["unattested_dropped"] == 1


def test_real_relay_timeout_retries_once_then_succeeds():
    c = build_cluster(5)
    node = c.nodes[c.addrs[0]]
    dead = c.addrs[1]
    c.net.unregister(dead)
    outcome = submit_and_run(c, c.addrs[0], "word03 word04", k_override=0, relays_override=[dead])
    assert outcome.status == "ok"
    assert node.core.counters["retries"] == 1
    assert node.core.view.get(dead).blacklisted_until is not None


def test_real_relay_timeout_twice_surfaces_error_and_drops_fakes():
    c = build_cluster(3)
    node = c.nodes[c.addrs[0]]
    # both peers go dark after attestation
    c.net.unregister(c.addrs[1])
    c.net.unregister(c.addrs[2])
    outcome = submit_and_run(c, c.addrs[0], "word03 word04", k_override=1)
    assert outcome.status == "error"
    assert outcome.results == []
    assert node.core.counters["failed_queries"] == 1


def test_fake_responses_dropped_silently():
    c = build_cluster(6)
    node = c.nodes[c.addrs[0]]
    outcome = submit_and_run(c, c.addrs[0], "word02 word08", k_override=3)
    assert outcome.status == "ok"
    assert node.core.counters["fake_responses_dropped"] == 3


def test_forward_envelopes_same_bucket_length():
    c = build_cluster(6)
    submit_and_run(c, c.addrs[0], "tiny", k_override=3)
    lengths = {
        len(decode_envelope(frame).sealed_payload)
        for (_, _, frame) in c.taps
        if decode_envelope(frame).msg_type == MsgType.QUERY_FORWARD
    }
    assert len(lengths) == 1  # real and fakes are size-indistinguishable


def test_relay_records_forwarded_query_in_fake_pool():
    c = build_cluster(4)
    text = "word11 word12 unmistakable"
    submit_and_run(c, c.addrs[0], text, k_override=0)
    holders = [
        addr for addr, node in c.nodes.items() if text in node.core.table.snapshot()
    ]
    assert len(holders) == 1
    assert holders[0] != c.addrs[0]  # the submitter never records its own query


def test_no_plaintext_in_host_logs(caplog):
    text = "extremely sensitive medical question"
    with caplog.at_level(logging.DEBUG):
        c = build_cluster(4)
        outcome = submit_and_run(c, c.addrs[0], text, k_override=2)
    assert outcome.status == "ok"
    for record in caplog.records:
        assert text not in record.getMessage()


def test_submit_before_bootstrap_raises():
    loop = EventLoop()
    node = RelayNode(
        NodeConfig(listen_addr="sim://solo", shuffle_period_s=None),
        SimRuntime(loop),
        random.Random(0),
        MockBackend(MockCorpus.synthetic(random.Random(1), 10, VOCAB)),
        send=lambda dest, data: None,
    )
    with pytest.raises(NotBootstrappedError):
        node.submit_async("anything", lambda o: None)


def test_wire_shuffle_exchanges_views():
    c = build_cluster(6)
    a = c.nodes[c.addrs[0]]
    before = {p.peer_id for p in a.core.view.snapshot()}
    assert a.core.shuffle_once()
    c.loop.run()
    assert a.core.counters["shuffles"] == 1
    # partner entries may arrive; at minimum the exchange did not corrupt the view
    after = {p.peer_id for p in a.core.view.snapshot()}
    assert c.addrs[0] not in after
    assert len(after) <= a.core.view.view_size
    assert before  # sanity


def test_status_counters():
    c = build_cluster(4)
    submit_and_run(c, c.addrs[0], "word00 word01", k_override=1)
    status = c.nodes[c.addrs[0]].status()
    assert status["ready"] is True
    assert status["pending"] == 0
    assert status["counters"]["submissions"] == 1
    assert status["table_size"] >= len(SEEDS)


def test_topics_config_roundtrip():
    from veilsearch.core import TopicDictionary

    dicts = {
        "health": TopicDictionary("health", frozenset({"diabetes"})),
        "politics": TopicDictionary("politics", frozenset({"election"})),
    }
    loop = EventLoop()
    node = RelayNode(
        NodeConfig(listen_addr="sim://solo", shuffle_period_s=None),
        SimRuntime(loop),
        random.Random(0),
        MockBackend(MockCorpus.synthetic(random.Random(1), 10, VOCAB)),
        send=lambda dest, data: None,
        dictionaries=dicts,
    )
    view = node.config_view()
    assert view["topics"]["available"] == ["health", "politics"]
    assert view["topics"]["enabled"] == ["health", "politics"]
    updated = node.set_topics(["health"])
    assert updated["topics"]["enabled"] == ["health"]
    with pytest.raises(ValueError):
        node.set_topics(["nonsense"])
    record, decision = node.decide("election polls")
    assert not decision.semantic_sensitive  # politics now disabled
