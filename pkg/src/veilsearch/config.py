"""Node configuration, loadable from JSON or key=value files."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class NodeConfig:
    listen_addr: str = "127.0.0.1:9470"
    api_addr: str = "127.0.0.1:8470"
    k_max: int = 7
    alpha: float = 0.5
    view_size: int = 20
    table_capacity: int = 10_000
    bucket_size: int = 256
    deadline_ms: int = 5000
    shuffle_period_s: float | None = 10.0
    replay_window_s: float = 120.0
    backend: str = "mock"  # mock | http
    backend_url: str | None = None
    rate_threshold: int | None = None
    registry_path: str | None = None
    dict_dir: str | None = None  # None -> packaged dictionaries
    seed_path: str | None = None  # None -> packaged seed queries
    corpus_path: str | None = None  # None -> packaged corpus
    enabled_topics: list[str] | None = None  # None -> all loaded topics
    profile_window: int | None = None
    build_tag: str = "veilsearch-core-1"

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "http"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.backend == "http" and not self.backend_url:
            raise ValueError("backend=http requires backend_url")
        if self.k_max < 1 or not 0.0 < self.alpha < 1.0:
            raise ValueError("k_max must be >= 1 and alpha in (0, 1)")

    @classmethod
    def from_file(cls, path: str) -> "NodeConfig":
        """JSON object, or ``key=value`` lines with ``#`` comments."""
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
        if text.lstrip().startswith("{"):
            raw = json.loads(text)
        else:
            raw = {}
            for line in text.splitlines():
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"bad config line: {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                raw[key] = value
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "NodeConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(value, known[key].type)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(value, type_hint: str):
    """Best-effort string coercion for key=value files; JSON input arrives
    already typed and passes through."""
    if not isinstance(value, str):
        return value
    hint = str(type_hint)
    if value.lower() in ("none", "null", ""):
        return None
    if "bool" in hint:
        return value.lower() in ("1", "true", "yes", "on")
    if "list" in hint:
        return [part.strip() for part in value.split(",") if part.strip()]
    if "int" in hint:
        return int(value)
    if "float" in hint:
        return float(value)
    return value
