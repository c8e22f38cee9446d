"""Run configuration: one JSON document, versioned by ``schema_version``.

Example::

    {
      "schema_version": 1,
      "seed": 0,
      "profiles": "embedded",
      "cluster": {"nodes": 4, "gpus_per_node": 8},
      "scheduler": {"policy": "eaco", "u_threshold": 90},
      "trace": {"path": "contention_trace.jsonl"},
      "output_dir": "runs/contention"
    }

``trace`` holds either ``path`` (JSONL file) or ``generate`` (generator
parameters; the run seed is used unless the block sets its own). Relative
paths resolve against the config file's directory.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .cluster import ClusterConfig
from .errors import ConfigError
from .profiles import ProfileDb, load_profiles
from .schedulers import SchedulerConfig
from .workload import Trace, TraceParams, check_trace_models, generate_trace, load_trace

SCHEMA_VERSION = 1
_TOP_LEVEL = {"schema_version", "seed", "profiles", "cluster", "scheduler", "trace", "output_dir"}


@dataclass
class RunConfig:
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    trace_path: Path | None = None
    trace_params: TraceParams | None = None
    profiles: str = "embedded"
    seed: int = 0
    output_dir: Path = Path("runs/default")

    def load_db(self) -> ProfileDb:
        return load_profiles(None if self.profiles == "embedded" else self.profiles)

    def build_trace(self, db: ProfileDb) -> Trace:
        if self.trace_path is not None:
            trace = load_trace(self.trace_path)
        else:
            params = self.trace_params or TraceParams(seed=self.seed)
            trace = generate_trace(params, db)
        check_trace_models(trace, db)
        return trace

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "profiles": self.profiles,
            "cluster": dataclasses.asdict(self.cluster),
            "scheduler": self.scheduler.to_dict(),
            "output_dir": str(self.output_dir),
        }
        if self.trace_path is not None:
            d["trace"] = {"path": str(self.trace_path)}
        else:
            d["trace"] = {"generate": dataclasses.asdict(self.trace_params or TraceParams(seed=self.seed))}
        return d


def _section(doc: dict, name: str, cls):
    raw = doc.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {name} fields: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"bad {name} section: {exc}") from exc


def parse_config(doc: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    unknown = set(doc) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base_dir / path

    cfg = RunConfig(
        cluster=_section(doc, "cluster", ClusterConfig),
        scheduler=_section(doc, "scheduler", SchedulerConfig),
        seed=seed,
        output_dir=resolve(doc.get("output_dir", "runs/default")),
    )
    profiles = doc.get("profiles", "embedded")
    cfg.profiles = profiles if profiles == "embedded" else str(resolve(profiles))

    trace = doc.get("trace", {})
    if not isinstance(trace, dict) or len(set(trace) & {"path", "generate"}) > 1 or set(trace) - {"path", "generate"}:
        raise ConfigError("'trace' must hold exactly one of 'path' or 'generate'")
    if "path" in trace:
        cfg.trace_path = resolve(trace["path"])
    else:
        gen = dict(trace.get("generate", {}))
        gen.setdefault("seed", seed)
        cfg.trace_params = TraceParams.from_dict(gen)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(doc, path.parent)
