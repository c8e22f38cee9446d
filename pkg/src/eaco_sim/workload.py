"""Job traces: synthetic generation and JSONL (de)serialisation.

Trace file format, one JSON object per line::

    {"job_id": "j0001", "model": "VGG-16", "arrival_h": 0.7, "gpu_count": 8,
     "gpu_type": "V100", "est_mem_gb": 131.3, "deadline_h": 54.9, "priority": "Normal"}

``deadline_h`` is a number or the string ``"inf"``. A loaded trace is named
after its file stem.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, TraceError
from .profiles import DEFAULT_GPU_COUNT, ProfileDb, default_db

DEFAULT_GPU_MEM_GB = 32.0


class Priority(str, Enum):
    NORMAL = "Normal"
    HIGH_EXCLUSIVE = "HighExclusive"


class JobState(str, Enum):
    QUEUED = "Queued"
    TRIAL = "Trial"
    RUNNING = "Running"
    COMPLETED = "Completed"
    REJECTED = "Rejected"


@dataclass
class Job:
    job_id: str
    model: str
    arrival: float
    gpu_count: int = DEFAULT_GPU_COUNT
    gpu_type: str = "V100"
    estimated_memory: float = 0.0  # GB over the whole GPU set
    deadline: float = math.inf
    priority: Priority = Priority.NORMAL
    # runtime state, owned by the simulation engine
    state: JobState = JobState.QUEUED
    epochs_done: int = 0
    alloc: object | None = None  # GpuSet
    first_start: float | None = None
    completion: float | None = None
    epoch_fraction: float = 0.0  # progress into the in-flight epoch at ``anchor``
    anchor: float = 0.0
    epoch_time: float = 0.0  # current ground-truth epoch time while allocated

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.deadline)

    def fraction_at(self, now: float) -> float:
        """Observed progress into the current epoch at time ``now``."""
        if self.alloc is None or self.epoch_time <= 0:
            return self.epoch_fraction
        return min(1.0, self.epoch_fraction + (now - self.anchor) / self.epoch_time)

    def fresh(self) -> Job:
        return Job(
            self.job_id, self.model, self.arrival, self.gpu_count, self.gpu_type,
            self.estimated_memory, self.deadline, self.priority,
        )

    def spec_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "model": self.model,
            "arrival_h": self.arrival,
            "gpu_count": self.gpu_count,
            "gpu_type": self.gpu_type,
            "est_mem_gb": self.estimated_memory,
            "deadline_h": "inf" if self.unbounded else self.deadline,
            "priority": self.priority.value,
        }


@dataclass(frozen=True)
class Trace:
    jobs: tuple[Job, ...]
    name: str = field(default="trace", compare=False)
    seed: int = field(default=0, compare=False)

    def __post_init__(self):
        validate_jobs(self.jobs)

    def __len__(self):
        return len(self.jobs)

    def fresh_jobs(self) -> list[Job]:
        return [j.fresh() for j in self.jobs]


def validate_jobs(jobs: Sequence[Job]) -> None:
    seen = set()
    prev = -math.inf
    for i, job in enumerate(jobs):
        if job.job_id in seen:
            raise TraceError(f"job {i}: duplicate job_id {job.job_id!r}")
        seen.add(job.job_id)
        if job.arrival < prev:
            raise TraceError(f"job {i} ({job.job_id}): arrival {job.arrival} precedes previous arrival {prev}")
        if job.arrival < 0:
            raise TraceError(f"job {i} ({job.job_id}): negative arrival")
        if job.gpu_count < 1:
            raise TraceError(f"job {i} ({job.job_id}): gpu_count must be >= 1")
        if job.deadline < job.arrival:
            raise TraceError(f"job {i} ({job.job_id}): deadline before arrival")
        prev = job.arrival


@dataclass
class TraceParams:
    n_jobs: int = 200
    arrival_rate: float = 1.0  # jobs per hour
    model_mix: Mapping[str, float] | None = None  # None: uniform over profiled models
    deadline_slack: float | tuple[float, float] = 1.5
    unbounded_fraction: float = 0.0
    high_priority_fraction: float = 0.0
    gpu_count: int = DEFAULT_GPU_COUNT
    gpu_type: str = "V100"
    gpu_mem_gb: float = DEFAULT_GPU_MEM_GB
    seed: int = 0
    name: str = "synthetic"
    first_arrival_at_zero: bool = False

    @classmethod
    def from_dict(cls, d: Mapping) -> TraceParams:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown trace generator fields: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("deadline_slack"), list):
            d["deadline_slack"] = tuple(d["deadline_slack"])
        return cls(**d)


def deadline_for(db: ProfileDb, model: str, arrival: float, slack: float, gpu_count: int = DEFAULT_GPU_COUNT) -> float:
    return arrival + slack * db.profile(model, gpu_count).jct


def estimated_memory_for(db: ProfileDb, model: str, gpu_count: int, gpu_mem_gb: float) -> float:
    return db.profile(model, gpu_count).max_mem_util / 100.0 * gpu_count * gpu_mem_gb


def _check_params(p: TraceParams, db: ProfileDb) -> tuple[list[str], np.ndarray]:
    if not isinstance(p.n_jobs, int) or p.n_jobs < 1:
        raise ConfigError(f"n_jobs must be a positive integer, got {p.n_jobs!r}")
    if not p.arrival_rate > 0 or math.isinf(p.arrival_rate):
        raise ConfigError(f"arrival_rate must be positive and finite, got {p.arrival_rate!r}")
    slack = p.deadline_slack
    lo, hi = (slack, slack) if isinstance(slack, (int, float)) else slack
    if not 0 < lo <= hi:
        raise ConfigError(f"deadline_slack must be positive (range lo <= hi), got {slack!r}")
    for name in ("unbounded_fraction", "high_priority_fraction"):
        if not 0 <= getattr(p, name) <= 1:
            raise ConfigError(f"{name} must lie in [0, 1]")
    mix = p.model_mix or {m: 1.0 for m in db.models}
    models = sorted(mix)
    weights = np.array([mix[m] for m in models], dtype=float)
    if (weights < 0).any() or weights.sum() <= 0:
        raise ConfigError("model_mix weights must be non-negative and not all zero")
    for m in models:
        if not db.has_profile(m, p.gpu_count):
            raise ConfigError(f"model {m!r} has no profile for {p.gpu_count} GPUs")
    return models, weights / weights.sum()


def generate_trace(params: TraceParams, db: ProfileDb | None = None) -> Trace:
    """Poisson arrivals with models drawn from ``params.model_mix``."""
    db = db or default_db()
    models, probs = _check_params(params, db)
    rng = np.random.default_rng(params.seed)
    slack = params.deadline_slack
    lo, hi = (slack, slack) if isinstance(slack, (int, float)) else slack

    gaps = rng.exponential(1.0 / params.arrival_rate, size=params.n_jobs)
    if params.first_arrival_at_zero:
        gaps[0] = 0.0
    arrivals = np.cumsum(gaps)
    picks = rng.choice(len(models), size=params.n_jobs, p=probs)
    slacks = rng.uniform(lo, hi, size=params.n_jobs)
    unbounded = rng.random(params.n_jobs) < params.unbounded_fraction
    high = rng.random(params.n_jobs) < params.high_priority_fraction

    width = len(str(params.n_jobs))
    jobs = []
    for i in range(params.n_jobs):
        model = models[picks[i]]
        arrival = float(arrivals[i])
        deadline = math.inf if unbounded[i] else deadline_for(db, model, arrival, float(slacks[i]), params.gpu_count)
        jobs.append(Job(
            job_id=f"j{i:0{width}d}",
            model=model,
            arrival=arrival,
            gpu_count=params.gpu_count,
            gpu_type=params.gpu_type,
            estimated_memory=estimated_memory_for(db, model, params.gpu_count, params.gpu_mem_gb),
            deadline=deadline,
            priority=Priority.HIGH_EXCLUSIVE if high[i] else Priority.NORMAL,
        ))
    return Trace(tuple(jobs), name=params.name, seed=params.seed)


# --------------------------------------------------------------------------- JSONL

_REQUIRED = ("job_id", "model", "arrival_h", "gpu_count", "gpu_type", "est_mem_gb", "deadline_h", "priority")


def _job_from_record(rec: dict, lineno: int) -> Job:
    for key in _REQUIRED:
        if key not in rec:
            raise TraceError(f"line {lineno}: missing field {key!r}")
    try:
        deadline = rec["deadline_h"]
        deadline = math.inf if deadline in ("inf", None) else float(deadline)
        return Job(
            job_id=str(rec["job_id"]),
            model=str(rec["model"]),
            arrival=float(rec["arrival_h"]),
            gpu_count=int(rec["gpu_count"]),
            gpu_type=str(rec["gpu_type"]),
            estimated_memory=float(rec["est_mem_gb"]),
            deadline=deadline,
            priority=Priority(rec["priority"]),
        )
    except (TypeError, ValueError) as exc:
        raise TraceError(f"line {lineno}: {exc}") from exc


def save_trace(trace: Trace, path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(job.spec_dict(), sort_keys=True) + "\n" for job in trace.jobs))


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    if not path.exists():
        raise TraceError(f"trace file not found: {path}")
    jobs = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(rec, dict):
            raise TraceError(f"line {lineno}: expected a JSON object")
        jobs.append(_job_from_record(rec, lineno))
    return Trace(tuple(jobs), name=path.stem)


def check_trace_models(trace: Trace, db: ProfileDb) -> None:
    for job in trace.jobs:
        if not db.has_profile(job.model, job.gpu_count):
            raise TraceError(f"job {job.job_id}: no profile for {job.model!r} on {job.gpu_count} GPUs")


def make_job(
    job_id: str,
    model: str,
    arrival: float = 0.0,
    *,
    deadline: float = math.inf,
    priority: Priority = Priority.NORMAL,
    db: ProfileDb | None = None,
    gpu_count: int = DEFAULT_GPU_COUNT,
    gpu_mem_gb: float = DEFAULT_GPU_MEM_GB,
    estimated_memory: float | None = None,
) -> Job:
    """Convenience constructor filling in the estimated memory from the profile."""
    db = db or default_db()
    if estimated_memory is None:
        estimated_memory = estimated_memory_for(db, model, gpu_count, gpu_mem_gb)
    return Job(job_id, model, arrival, gpu_count, db.gpu_type, estimated_memory, deadline, priority)


__all__ = [
    "Job", "JobState", "Priority", "Trace", "TraceParams", "generate_trace", "load_trace",
    "save_trace", "deadline_for", "make_job", "check_trace_models",
]
