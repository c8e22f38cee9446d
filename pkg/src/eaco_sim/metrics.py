"""Run reports: energy, timing, active nodes, and the weighted objective.

Files written by :func:`emit`:

* ``summary.json``: every scalar field plus ``per_job`` rows (sorted keys).
* ``active_nodes.csv``: ``time_h,count`` step series.
* ``power.csv``: ``time_h,watts`` step series (cluster total).

Series are right-continuous steps: a value holds from its timestamp until the next one.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Sequence

from .errors import ConfigError, MetricsError

SCHEMA_VERSION = 1


@dataclass
class JobMetrics:
    job_id: str
    model: str
    arrival: float
    start: float
    completion: float
    wait: float
    runtime: float
    jct: float
    jtt: float
    deadline: float | None  # None means unbounded
    deadline_met: bool
    energy_kwh: float
    epoch_time: float  # realised mean epoch time


@dataclass
class MetricsReport:
    policy: str
    total_energy: float
    per_job: list[JobMetrics]
    avg_jct: float
    avg_jtt: float
    avg_runtime: float
    active_nodes_series: list[tuple[float, int]]
    power_series: list[tuple[float, float]]
    objective_value: float
    deadline_violations: int
    mean_active_nodes: float
    makespan: float
    rejected: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        d["active_nodes_series"] = [list(p) for p in self.active_nodes_series]
        d["power_series"] = [list(p) for p in self.power_series]
        return d

    def summary_line(self) -> str:
        return (f"{self.policy}: energy {self.total_energy:.2f} kWh, avg JCT {self.avg_jct:.2f} h, "
                f"avg JTT {self.avg_jtt:.2f} h, deadline violations {self.deadline_violations}")


def objective_value(per_job_energies: Sequence[float], avg_tpe: float, alpha: float) -> float:
    """alpha * total job energy (kWh) + (1 - alpha) * mean time per epoch (h); unitless mix."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * math.fsum(per_job_energies) + (1.0 - alpha) * avg_tpe


def step_integral(series: Sequence[tuple[float, float]], end: float) -> float:
    """Integral of a right-continuous step series over [series[0].t, end]."""
    total = 0.0
    for (t0, v), (t1, _) in zip(series, [*series[1:], (end, 0.0)]):
        total += v * max(0.0, min(t1, end) - t0)
    return total


def time_mean(series: Sequence[tuple[float, float]], end: float) -> float:
    if not series or end <= series[0][0]:
        return 0.0
    return step_integral(series, end) / (end - series[0][0])


def build_report(policy: str, jobs: Sequence, n_epochs: dict[str, int], job_energy: dict[str, float],
                 total_energy: float, active_series, power_series, makespan: float, alpha: float,
                 rejected: Sequence[str] = (), counts: dict[str, int] | None = None) -> MetricsReport:
    rows = []
    for j in jobs:
        if j.completion is None:
            continue
        runtime = j.completion - j.first_start
        wait = j.first_start - j.arrival
        met = j.unbounded or j.completion <= j.deadline + 1e-9
        rows.append(JobMetrics(
            job_id=j.job_id, model=j.model, arrival=j.arrival, start=j.first_start, completion=j.completion,
            wait=wait, runtime=runtime, jct=runtime, jtt=wait + runtime,
            deadline=None if j.unbounded else j.deadline, deadline_met=met,
            energy_kwh=job_energy.get(j.job_id, 0.0), epoch_time=runtime / n_epochs[j.job_id],
        ))

    def mean(xs):
        xs = list(xs)
        return fmean(xs) if xs else 0.0

    avg_tpe = mean(r.epoch_time for r in rows)
    return MetricsReport(
        policy=policy,
        total_energy=total_energy,
        per_job=rows,
        avg_jct=mean(r.jct for r in rows),
        avg_jtt=mean(r.jtt for r in rows),
        avg_runtime=mean(r.runtime for r in rows),
        active_nodes_series=list(active_series),
        power_series=list(power_series),
        objective_value=objective_value([r.energy_kwh for r in rows], avg_tpe, alpha),
        deadline_violations=sum(not r.deadline_met for r in rows),
        mean_active_nodes=time_mean(active_series, makespan),
        makespan=makespan,
        rejected=list(rejected),
        counts=dict(counts or {}),
    )


NORMALIZED_FIELDS = ("total_energy", "avg_runtime", "avg_jtt", "mean_active_nodes")


def normalize_report(report: MetricsReport, baseline: MetricsReport) -> dict[str, float]:
    out = {}
    for name in NORMALIZED_FIELDS:
        denom = getattr(baseline, name)
        if denom == 0:
            raise MetricsError(f"baseline {name} is zero; cannot normalise")
        out[name] = getattr(report, name) / denom
    return out


def emit(report: MetricsReport, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out_dir / "summary.json",
        "active_nodes": out_dir / "active_nodes.csv",
        "power": out_dir / "power.csv",
    }
    paths["summary"].write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    for key, header, series in (("active_nodes", ("time_h", "count"), report.active_nodes_series),
                                ("power", ("time_h", "watts"), report.power_series)):
        with paths[key].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(series)
    return paths


def load_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
