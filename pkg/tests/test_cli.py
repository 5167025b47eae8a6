import json

import pytest

from veilsearch.cli import main
from veilsearch.config import NodeConfig


def test_simulate_writes_report(tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main(
        [
            "simulate",
            "--nodes", "5",
            "--queries", "40",
            "--hours", "0.02",
            "--seed", "3",
            "--k-policy", "fixed:1",
            "--out", str(out),
        ]
    )
    assert rc == 0
    report = json.loads(out.read_text())
    assert report["queries_completed"] == 40
    assert report["conservation_ok"] is True
    assert "load ratio" in capsys.readouterr().out


def test_simulate_from_config_file(tmp_path):
    cfg = {
        "node_count": 4,
        "total_queries": 20,
        "duration_hours": 0.01,
        "seed": 9,
        "k_policy": "none",
        "latency": {"hop_base_ms": 0, "hop_jitter_ms": 0, "engine_base_ms": 0, "engine_jitter_ms": 0},
    }
    cfg_path = tmp_path / "sim.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "r.json"
    assert main(["simulate", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["queries_submitted"] == 20


def test_bench_cli(tmp_path, capsys):
    out = tmp_path / "bench.json"
    rc = main(["bench", "--rates", "500,2000", "--requests", "400", "--out", str(out)])
    assert rc == 0
    report = json.loads(out.read_text())
    assert len(report["points"]) == 2
    assert "median" in capsys.readouterr().out


def test_evaluate_synthetic(tmp_path, capsys):
    out = tmp_path / "eval.json"
    csv_out = tmp_path / "eval.csv"
    rc = main(
        [
            "evaluate",
            "--synthetic-users", "8",
            "--synthetic-queries", "12",
            "--mechanism", "all",
            "--seeds", "2",
            "--out", str(out),
            "--csv", str(csv_out),
        ]
    )
    assert rc == 0
    payload = json.loads(out.read_text())
    assert set(payload["mechanisms"]) == {"none", "adaptive", "fixed_k"}
    assert payload["mechanisms"]["adaptive"]["mean_rate"] <= payload["mechanisms"]["none"]["mean_rate"]
    assert csv_out.read_text().startswith("mechanism")
    assert "re-identification rate" in capsys.readouterr().out


def test_evaluate_log_file(tmp_path):
    log = tmp_path / "log.csv"
    rows = ["user_id,query,iso_timestamp"]
    for u in ("a", "b"):
        for i in range(6):
            rows.append(f"{u},{u} repeated interest {i % 2},2020-01-01T10:0{i}:00")
    log.write_text("\n".join(rows))
    rc = main(["evaluate", "--log", str(log), "--format", "simple_csv", "--mechanism", "none"])
    assert rc == 0


def test_evaluate_requires_source(capsys):
    assert main(["evaluate", "--mechanism", "none"]) == 2


def test_categorize_cli(tmp_path, capsys):
    log = tmp_path / "log.csv"
    log.write_text(
        "user_id,query,iso_timestamp\n"
        "a,diabetes diet plan,2020-01-01T10:00:00\n"
        "a,cheap flights,2020-01-01T10:01:00\n"
        "b,election polls today,2020-01-01T10:02:00\n"
    )
    truth = tmp_path / "truth.txt"
    truth.write_text("0\n2\n")
    out = tmp_path / "cat.json"
    rc = main(
        ["categorize", "--log", str(log), "--format", "simple_csv",
         "--truth", str(truth), "--out", str(out)]
    )
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["sensitive"] == 2
    assert payload["precision"] == 1.0 and payload["recall"] == 1.0
    assert "health" in capsys.readouterr().out


def test_node_config_files(tmp_path):
    json_cfg = tmp_path / "node.json"
    json_cfg.write_text(json.dumps({"k_max": 5, "listen_addr": "127.0.0.1:9999"}))
    cfg = NodeConfig.from_file(str(json_cfg))
    assert cfg.k_max == 5 and cfg.listen_addr == "127.0.0.1:9999"

    kv_cfg = tmp_path / "node.conf"
    kv_cfg.write_text(
        "# node settings\nk_max = 4\nalpha = 0.3\nview_size = 10\n"
        "backend = mock\nenabled_topics = health,politics\nrate_threshold = none\n"
    )
    cfg = NodeConfig.from_file(str(kv_cfg))
    assert cfg.k_max == 4 and cfg.alpha == 0.3
    assert cfg.enabled_topics == ["health", "politics"]
    assert cfg.rate_threshold is None


def test_node_config_validation(tmp_path):
    with pytest.raises(ValueError):
        NodeConfig(backend="gopher")
    with pytest.raises(ValueError):
        NodeConfig(backend="http")  # needs backend_url
    with pytest.raises(ValueError):
        NodeConfig.from_dict({"unknown_key": 1})
    bad = tmp_path / "bad.conf"
    bad.write_text("this line has no equals sign\n")
    with pytest.raises(ValueError):
        NodeConfig.from_file(str(bad))
