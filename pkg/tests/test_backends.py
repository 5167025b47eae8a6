import random

import pytest

from veilsearch.backends import (
    BackendResponse,
    Document,
    MockBackend,
    MockCorpus,
    RateLimiter,
    StubBackend,
    mock_search,
)
from veilsearch.core import normalize, validate_result_list


def corpus():
    return MockCorpus(
        [
            Document("https://a.test/1", "alpha", frozenset({"heart", "attack", "care"})),
            Document("https://a.test/2", "beta", frozenset({"cheap", "flights"})),
            Document("https://a.test/3", "gamma", frozenset({"heart", "rate"})),
        ]
    )


def test_single_match_rank_one():
    res = mock_search(corpus(), frozenset({"flights"}))
    assert [r.url for r in res] == ["https://a.test/2"]
    assert res[0].rank == 1


def test_empty_query_empty_results():
    assert mock_search(corpus(), frozenset()) == []


def test_tie_break_by_url():
    # both heart docs score 1/1 for {"heart"}; lexicographically smaller first
    res = mock_search(corpus(), frozenset({"heart"}))
    assert [r.url for r in res] == ["https://a.test/1", "https://a.test/3"]
    assert [r.rank for r in res] == [1, 2]


def test_scores_order_by_overlap_fraction():
    res = mock_search(corpus(), frozenset({"heart", "attack"}))
    assert res[0].url == "https://a.test/1"  # overlap 2/2 beats 1/2
    validate_result_list(res)


def test_mock_search_deterministic_golden():
    rng = random.Random(1234)
    vocab = [f"w{i}" for i in range(40)]
    c = MockCorpus.synthetic(rng, 60, vocab)
    q = frozenset({"w1", "w5", "w9"})
    first = mock_search(c, q)
    for _ in range(5):
        assert mock_search(c, q) == first
    assert len(first) <= 10
    validate_result_list(first)


def test_corpus_rejects_duplicate_urls():
    with pytest.raises(ValueError):
        MockCorpus([Document("u", "a", frozenset({"x"})), Document("u", "b", frozenset({"y"}))])


def test_corpus_jsonl_roundtrip(tmp_path):
    f = tmp_path / "corpus.jsonl"
    f.write_text(
        '{"url": "https://x.test/1", "title": "One", "text": "Heart attack care"}\n'
        "\n"
        '{"url": "https://x.test/2", "title": "Two", "text": "cheap flights"}\n'
    )
    c = MockCorpus.from_jsonl(str(f))
    assert len(c) == 2
    assert c.documents[0].terms == normalize("Heart attack care")


class ManualClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def test_rate_limiter_threshold_boundary():
    clock = ManualClock()
    rl = RateLimiter(threshold=1000, clock=clock)
    for i in range(1000):
        clock.t += 1.0
        assert rl.check("src"), f"request {i} should pass"
    clock.t += 1.0
    assert not rl.check("src")  # 1001st within the hour crosses
    assert rl.blocked_sources() == {"src"}


def test_rate_limiter_window_slides():
    clock = ManualClock()
    rl = RateLimiter(threshold=10, window_s=3600.0, clock=clock)
    for _ in range(10):
        assert rl.check("src")
        clock.t += 400.0  # spread over 4000s: oldest falls out of window
    assert rl.check("src")


def test_rate_limiter_blocked_until_expiry():
    clock = ManualClock()
    rl = RateLimiter(threshold=2, window_s=100.0, block_s=50.0, clock=clock)
    assert rl.check("s") and rl.check("s")
    assert not rl.check("s")  # blocked now
    clock.t = 10.0
    assert not rl.check("s")  # still blocked
    clock.t = 200.0  # block expired and window empty
    assert rl.check("s")


def test_rate_limiter_disabled():
    rl = RateLimiter(threshold=None)
    assert all(rl.check("s") for _ in range(10_000))


def test_rate_limiter_paper_anchor_rates():
    # a single proxy pushing 10,500 requests in an hour is blocked, a node
    # carrying 94 requests per hour never is
    clock = ManualClock()
    rl = RateLimiter(threshold=1000, clock=clock)
    for i in range(10_500):
        clock.t = i * 3600.0 / 10_500
        if not rl.check("proxy"):
            break
    assert "proxy" in rl.blocked_sources()

    clock2 = ManualClock()
    rl2 = RateLimiter(threshold=1000, clock=clock2)
    for i in range(94 * 8):  # eight hours of traffic
        clock2.t = i * 3600.0 / 94
        assert rl2.check("node")
    assert rl2.blocked_sources() == set()


def test_threshold_crossing_in_node_count():
    # 896 users at 31.23 queries/hour with k=3 emit U*31.23*4 engine calls
    # per hour. Spread over N nodes the per-node rate crosses a 1000/h
    # threshold exactly between N=111 and N=112.
    users, rate, fanout, threshold = 896, 31.23, 4, 1000
    total_per_hour = users * rate * fanout
    n_min = next(n for n in range(1, 1000) if total_per_hour / n <= threshold)
    assert n_min == 112

    def spread_over(nodes):
        clock = ManualClock()
        rl = RateLimiter(threshold=threshold, clock=clock)
        per_node = round(total_per_hour / nodes)
        for i in range(per_node):
            clock.t = i * 3600.0 / per_node
            rl.check("node")
        return rl.blocked_sources()

    assert spread_over(112) == set()  # 999 req/h per node: never blocked
    assert spread_over(111) == {"node"}  # 1008 req/h per node: blocked


def test_mock_backend_accounts_and_blocks():
    clock = ManualClock()
    backend = MockBackend(corpus(), RateLimiter(threshold=2, clock=clock))
    assert backend.search("n1", "heart").status == "ok"
    assert backend.search("n1", "heart").status == "ok"
    r = backend.search("n1", "heart")
    assert r.status == "blocked" and r.results == []
    assert backend.attempts["n1"] == 3
    assert backend.search("n2", "flights").status == "ok"
    assert backend.total_attempts() == 4


def test_stub_backend_counts():
    stub = StubBackend()
    r = stub.search("x", "anything")
    assert isinstance(r, BackendResponse) and r.status == "ok" and stub.calls == 1
