"""Command-line entry points.

    veilsearch simulate  --nodes 20 --queries 1000 --out report.json
    veilsearch bench     --rates 1000,5000,10000
    veilsearch evaluate  --log queries.tsv --mechanism adaptive
    veilsearch evaluate  --synthetic-users 50 --mechanism all --seeds 10
    veilsearch node      --config node.json
    veilsearch categorize --dict-dir dicts/ --log queries.tsv
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
import time

from veilsearch.backends import HttpBackend, MockBackend, MockCorpus, RateLimiter
from veilsearch.config import NodeConfig
from veilsearch.core import normalize
from veilsearch.evaluation import (
    AttackConfig,
    MECHANISMS,
    generate_synthetic_log,
    ingest_log,
    precision_recall,
    run_attack,
    split_train_test,
    write_report_csv,
    write_report_json,
)
from veilsearch.httpapi import ApiServer
from veilsearch.net import TcpTransport
from veilsearch.node import RelayNode
from veilsearch.peers import load_registry
from veilsearch.resources import (
    packaged_corpus_path,
    packaged_dictionaries,
    packaged_seed_queries,
)
from veilsearch.runtime import ThreadRuntime
from veilsearch.sensitivity import assess_semantic, load_dictionary_dir
from veilsearch.simulator import LatencyModel, SimConfig, run_simulation, run_throughput_bench

logger = logging.getLogger(__name__)


def _cmd_simulate(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        latency = LatencyModel(**raw.pop("latency")) if "latency" in raw else LatencyModel()
        cfg = SimConfig(latency=latency, **raw)
    else:
        cfg = SimConfig(
            node_count=args.nodes,
            seed=args.seed,
            total_queries=args.queries,
            duration_hours=args.hours,
            k_policy=args.k_policy,
            topology=args.topology,
            rate_threshold=args.threshold,
        )
    started = time.time()
    report = run_simulation(cfg)
    elapsed = time.time() - started
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        print(f"report written to {args.out} ({elapsed:.1f}s wall time)")
    else:
        print(report.to_json())
    print(
        f"completed {report.queries_completed}/{report.queries_submitted} queries, "
        f"p50 latency {report.latency_ms['p50']:.0f} ms, "
        f"load ratio {report.load_ratio:.2f}, blocked nodes: {len(report.blocked_nodes)}"
    )
    return 0


def _cmd_bench(args) -> int:
    rates = [float(r) for r in args.rates.split(",") if r]
    report = run_throughput_bench(rates, n_requests=args.requests)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    for point in report.points:
        print(
            f"rate {point['rate']:>10.0f} req/s  median {point['median_ms']:8.3f} ms  "
            f"p99 {point['p99_ms']:8.3f} ms"
        )
    knee = f"{report.knee_rate:.0f} req/s" if report.knee_rate else "not reached"
    print(f"service mean {report.service_us_mean:.0f} us, knee: {knee}")
    return 0


def _cmd_evaluate(args) -> int:
    if args.synthetic_users:
        log = generate_synthetic_log(
            users=args.synthetic_users,
            queries_per_user=args.synthetic_queries,
            vocab_overlap=args.vocab_overlap,
            seed=args.seed,
        )
    elif args.log:
        log = ingest_log(args.log, args.format)
    else:
        print("evaluate needs --log or --synthetic-users", file=sys.stderr)
        return 2
    split = split_train_test(log)
    print(
        f"{len(split.profiles)} users, {split.training_total} training queries, "
        f"{len(split.test)} test queries ({split.dropped_users} users dropped)"
    )
    mechanisms = list(MECHANISMS) if args.mechanism == "all" else [args.mechanism]
    seeds = list(range(args.seeds))
    rows = []
    summary = {}
    for mechanism in mechanisms:
        rates = []
        for seed in seeds:
            outcome = run_attack(
                mechanism,
                split.test,
                split.profiles,
                AttackConfig(
                    k_max=args.k_max,
                    alpha=args.alpha,
                    seed=seed,
                    online_adversary=args.online_adversary,
                ),
            )
            rates.append(outcome.rate)
            for user, entry in outcome.per_user.items():
                rows.append({"mechanism": mechanism, "seed": seed, "user": user, **entry})
        mean_rate = sum(rates) / len(rates)
        summary[mechanism] = {
            "mean_rate": mean_rate,
            "rates": rates,
            "k_max": args.k_max,
        }
        print(f"{mechanism:>9}: re-identification rate {mean_rate:.4f} over {len(seeds)} seeds")
    payload = {
        "k_max": args.k_max,
        "alpha": args.alpha,
        "users": len(split.profiles),
        "test_queries": len(split.test),
        "mechanisms": summary,
    }
    if args.out:
        write_report_json(args.out, payload)
        print(f"report written to {args.out}")
    if args.csv:
        write_report_csv(args.csv, rows)
        print(f"per-user rows written to {args.csv}")
    return 0


def _cmd_categorize(args) -> int:
    dicts = load_dictionary_dir(args.dict_dir) if args.dict_dir else packaged_dictionaries()
    log = ingest_log(args.log, args.format)
    detected = set()
    matched_by_topic: dict[str, int] = {}
    for i, (_, text, _) in enumerate(log.records):
        sensitive, topics = assess_semantic(normalize(text), dicts.values())
        if sensitive:
            detected.add(i)
            for t in topics:
                matched_by_topic[t] = matched_by_topic.get(t, 0) + 1
    share = len(detected) / len(log)
    print(f"{len(detected)}/{len(log)} queries sensitive ({share:.2%})")
    for topic in sorted(matched_by_topic):
        print(f"  {topic}: {matched_by_topic[topic]}")
    payload = {
        "queries": len(log),
        "sensitive": len(detected),
        "share": share,
        "by_topic": matched_by_topic,
    }
    if args.truth:
        with open(args.truth, encoding="utf-8") as fh:
            truth = {int(line.strip()) for line in fh if line.strip()}
        precision, recall = precision_recall(detected, truth)
        payload["precision"] = precision
        payload["recall"] = recall
        print(f"precision {precision:.3f}, recall {recall:.3f}")
    if args.out:
        write_report_json(args.out, payload)
    return 0


def _cmd_node(args) -> int:
    cfg = NodeConfig.from_file(args.config) if args.config else NodeConfig()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    runtime = ThreadRuntime()
    rng = random.SystemRandom()

    if cfg.backend == "http":
        backend = HttpBackend(cfg.backend_url)
    else:
        corpus = MockCorpus.from_jsonl(cfg.corpus_path or packaged_corpus_path())
        backend = MockBackend(corpus, RateLimiter(cfg.rate_threshold))

    dicts = load_dictionary_dir(cfg.dict_dir) if cfg.dict_dir else packaged_dictionaries()
    node_holder: list[RelayNode] = []
    transport = TcpTransport(cfg.listen_addr, lambda data: node_holder[0].on_bytes(data))
    node = RelayNode(cfg, runtime, rng, backend, transport.send, dicts)
    node_holder.append(node)
    transport.start()

    if cfg.seed_path:
        with open(cfg.seed_path, encoding="utf-8") as fh:
            seeds = [line.strip() for line in fh if line.strip()]
    else:
        seeds = packaged_seed_queries()
    if cfg.registry_path:
        registry = load_registry(cfg.registry_path)
        node.bootstrap(registry, seeds)
        node.start_shuffle_task()
        logger.info("bootstrapped from %s (%d peers)", cfg.registry_path, len(registry))
    else:
        logger.warning("no registry configured; node will answer 503 until peers exist")

    api = ApiServer(node, cfg.api_addr)
    api.start()
    logger.info("node %s ready, api on %s", cfg.listen_addr, cfg.api_addr)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        api.stop()
        transport.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veilsearch", description="decentralized private web search toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a closed-world multi-node simulation")
    sim.add_argument("--config", help="SimConfig as JSON (overrides the flags)")
    sim.add_argument("--out", help="write the full report JSON here")
    sim.add_argument("--nodes", type=int, default=20)
    sim.add_argument("--queries", type=int, default=1000)
    sim.add_argument("--hours", type=float, default=0.25)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--k-policy", default="adaptive", help="adaptive | none | fixed:<n>")
    sim.add_argument("--topology", default="uniform", choices=["uniform", "star"])
    sim.add_argument("--threshold", type=int, default=None, help="engine block threshold per hour")
    sim.set_defaults(fn=_cmd_simulate)

    bench = sub.add_parser("bench", help="relay-path throughput benchmark")
    bench.add_argument("--rates", default="1000,5000,10000", help="offered rates, req/s")
    bench.add_argument("--requests", type=int, default=3000)
    bench.add_argument("--out")
    bench.set_defaults(fn=_cmd_bench)

    ev = sub.add_parser("evaluate", help="run the re-identification attack")
    ev.add_argument("--log", help="query log file")
    ev.add_argument("--format", default="aol_tsv", choices=["aol_tsv", "simple_csv"])
    ev.add_argument("--synthetic-users", type=int, default=0)
    ev.add_argument("--synthetic-queries", type=int, default=30)
    ev.add_argument("--vocab-overlap", type=float, default=0.5)
    ev.add_argument("--mechanism", default="all", choices=list(MECHANISMS) + ["all"])
    ev.add_argument("--k-max", type=int, default=7)
    ev.add_argument("--alpha", type=float, default=0.5)
    ev.add_argument("--seeds", type=int, default=1)
    ev.add_argument("--seed", type=int, default=0, help="synthetic generator seed")
    ev.add_argument(
        "--online-adversary",
        action="store_true",
        help="exploratory: attacker folds attributed queries into profiles",
    )
    ev.add_argument("--out", help="summary JSON path")
    ev.add_argument("--csv", help="per-user CSV path")
    ev.set_defaults(fn=_cmd_evaluate)

    cat = sub.add_parser("categorize", help="label log queries with sensitive topics")
    cat.add_argument("--dict-dir", help="directory of topic term lists (default: packaged)")
    cat.add_argument("--log", required=True)
    cat.add_argument("--format", default="aol_tsv", choices=["aol_tsv", "simple_csv"])
    cat.add_argument("--truth", help="file of true-sensitive row indices for precision/recall")
    cat.add_argument("--out")
    cat.set_defaults(fn=_cmd_categorize)

    node = sub.add_parser("node", help="run a live node (TCP transport + local API)")
    node.add_argument("--config", help="NodeConfig file (JSON or key=value)")
    node.set_defaults(fn=_cmd_node)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
