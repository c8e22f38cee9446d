"""Discrete-event simulation loop.

Events at equal times are ordered EpochEnd < JobDone < Arrival < Retry, then by
push sequence, so state settles before any new placement is attempted.

Each running job carries ``epoch_fraction`` (progress into its in-flight
epoch at ``anchor``) and its current ground-truth ``epoch_time``. When the
membership of its GPU set changes, progress is settled at the current clock
and the remainder of the epoch is re-timed at the new rate. Pending events of
a job carry a version number; stale versions are dropped on pop.

Event log records (JSONL via :meth:`EventLog.write`)::

    {"t": 0.39, "event": "epoch_end", "job": "j03", "epochs": 1}
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

from .cluster import (
    ClusterConfig, ClusterState, GpuSet, accumulate_energy, apply_allocation, build_cluster,
    node_power, remove_allocation,
)
from .errors import SimulationFinished
from .metrics import MetricsReport, build_report
from .profiles import ProfileDb, default_db, ground_truth_epoch_time
from .schedulers import (
    AllocateTrial, Finalize, Pack, Policy, SchedulerConfig, Undo, Unpack, Wait, make_policy,
)
from .workload import Job, JobState, Priority, Trace

log = logging.getLogger(__name__)

BOUNDARY_EPS = 1e-9


class EventKind(IntEnum):
    EPOCH_END = 0
    JOB_DONE = 1
    ARRIVAL = 2
    RETRY = 3


@dataclass(frozen=True, order=True)
class Event:
    time: float
    kind: EventKind
    seq: int
    job_id: str = ""
    version: int = 0


@dataclass
class EventLog:
    records: list[dict] = field(default_factory=list)

    def add(self, t: float, event: str, job: str = "", **extra) -> None:
        rec = {"t": t, "event": event}
        if job:
            rec["job"] = job
        rec.update(extra)
        self.records.append(rec)

    def of(self, event: str) -> list[dict]:
        return [r for r in self.records if r["event"] == event]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    def __len__(self):
        return len(self.records)


class Engine:
    def __init__(self, trace: Trace, sched: SchedulerConfig | None = None,
                 cluster: ClusterConfig | None = None, db: ProfileDb | None = None):
        self.db = db or default_db()
        self.sched = sched or SchedulerConfig()
        self.cluster_cfg = cluster or ClusterConfig()
        self.state: ClusterState = build_cluster(self.cluster_cfg)
        self.policy = make_policy(self.sched, self.db)
        self.jobs: dict[str, Job] = {j.job_id: j for j in trace.fresh_jobs()}
        self.rank = {j.job_id: i for i, j in enumerate(trace.jobs)}
        self.log = EventLog()
        self.queue: list[str] = []
        self.rejected: list[str] = []
        self.clock = 0.0
        self.counts = {"trials": 0, "finalized": 0, "undos": 0, "unpacks": 0}

        self._heap: list[Event] = []
        self._seq = itertools.count()
        self._version = {jid: 0 for jid in self.jobs}
        self._retry_at: float | None = None

        n = len(self.state.nodes)
        self.node_energy = [0.0] * n
        self.job_energy = {jid: 0.0 for jid in self.jobs}
        self._powers = [node_power(node, self.db) for node in self.state.nodes]
        self._residents: list[list[str]] = [[] for _ in range(n)]
        self.power_series: list[tuple[float, float]] = []
        self.active_series: list[tuple[float, int]] = []
        if self.jobs:
            self._record_series()
        for job in self.jobs.values():
            self._push(job.arrival, EventKind.ARRIVAL, job.job_id)

    # ------------------------------------------------------------------ plumbing

    def _push(self, t: float, kind: EventKind, job_id: str = "", version: int = 0) -> None:
        heapq.heappush(self._heap, Event(t, kind, next(self._seq), job_id, version))

    def _push_retry(self) -> None:
        if self._retry_at != self.clock:
            self._retry_at = self.clock
            self._push(self.clock, EventKind.RETRY)

    def _bump(self, job_id: str) -> int:
        self._version[job_id] += 1
        return self._version[job_id]

    def _record_series(self) -> None:
        t = self.clock
        for series, value in ((self.power_series, sum(self._powers)),
                              (self.active_series, self.state.active_nodes())):
            if series and series[-1][0] == t:
                series.pop()
            if not series or series[-1][1] != value:
                series.append((t, value))

    def _refresh_power(self, node_id: int) -> None:
        node = self.state.nodes[node_id]
        self._powers[node_id] = node_power(node, self.db)
        self._residents[node_id] = [j.job_id for gs in node.groups for j in self.state.jobs_on(gs)]
        self._record_series()

    def _advance(self, t: float) -> None:
        dt = t - self.clock
        if dt > 0:
            inc = accumulate_energy(self.state, dt, self.db, self._powers)
            for node_id, kwh in enumerate(inc):
                self.node_energy[node_id] += kwh
                residents = self._residents[node_id]
                for jid in residents:
                    self.job_energy[jid] += kwh / len(residents)
        self.clock = max(self.clock, t)
        self.state.clock = self.clock

    # ------------------------------------------------------------------ set membership

    def _settle(self, gs: GpuSet) -> None:
        for j in self.state.jobs_on(gs):
            j.epoch_fraction = j.fraction_at(self.clock)
            j.anchor = self.clock

    def _retime(self, gs: GpuSet) -> None:
        members = self.state.jobs_on(gs)
        models = [j.model for j in members]
        for j in members:
            j.epoch_time = ground_truth_epoch_time(self.db, j.model, models, len(gs))
            if j.epochs_done >= self.db.profile(j.model, j.gpu_count).n_epochs:
                continue  # its JobDone is already pending
            v = self._bump(j.job_id)
            self._push(self.clock + (1.0 - j.epoch_fraction) * j.epoch_time, EventKind.EPOCH_END, j.job_id, v)

    def _place(self, job: Job, decision) -> None:
        gs = decision.gpu_set
        self._settle(gs)
        apply_allocation(self.state, job, gs, self.db)
        job.alloc = gs
        job.state = JobState.TRIAL if isinstance(decision, AllocateTrial) else JobState.RUNNING
        job.epoch_fraction = 0.0
        job.anchor = self.clock
        if job.first_start is None:
            job.first_start = self.clock
        self._retime(gs)
        self._refresh_power(gs.node_id)
        self.policy.placed(job, decision, self.state, self.clock)
        kind = {AllocateTrial: "trial", Pack: "pack"}.get(type(decision), "allocate")
        if kind == "trial":
            self.counts["trials"] += 1
        self.log.add(self.clock, kind, job.job_id, set=str(gs),
                     residents=[j.job_id for j in self.state.jobs_on(gs)])

    def _evict(self, job: Job) -> GpuSet:
        gs = job.alloc
        self._settle(gs)
        remove_allocation(self.state, job.job_id, self.db)
        job.alloc = None
        self._bump(job.job_id)
        self._retime(gs)
        self._refresh_power(gs.node_id)
        return gs

    def _requeue(self, job: Job) -> None:
        """Take a job off its set at an epoch boundary; in-flight partial work is lost."""
        self._evict(job)
        job.epoch_fraction = 0.0
        job.epoch_time = 0.0
        job.state = JobState.QUEUED
        self.queue.append(job.job_id)
        self._push_retry()

    def _apply_verdict(self, verdict) -> None:
        if verdict is None:
            return
        job = self.jobs[verdict.job_id]
        if isinstance(verdict, (Undo, Unpack)) and job.fraction_at(self.clock) >= 1.0 - BOUNDARY_EPS:
            # the job's own epoch ends at this instant too: credit it before moving the job
            if job.epochs_done + 1 >= self.db.profile(job.model, job.gpu_count).n_epochs:
                return  # finishing now; its pending epoch end completes it
            job.epochs_done += 1
            job.epoch_fraction, job.anchor = 0.0, self.clock
            self.log.add(self.clock, "epoch_end", job.job_id, epochs=job.epochs_done, set=str(job.alloc))
        if isinstance(verdict, Finalize):
            job.state = JobState.RUNNING
            self.counts["finalized"] += 1
            self.log.add(self.clock, "finalize", job.job_id, set=str(verdict.gpu_set))
            self._push_retry()
        elif isinstance(verdict, Undo):
            self.counts["undos"] += 1
            self.log.add(self.clock, "undo", job.job_id, set=str(verdict.gpu_set), reason=verdict.reason,
                         epochs=job.epochs_done)
            self._requeue(job)
        elif isinstance(verdict, Unpack):
            self.counts["unpacks"] += 1
            self.log.add(self.clock, "unpack", job.job_id, set=str(verdict.gpu_set),
                         inflation=round(verdict.inflation, 6), epochs=job.epochs_done)
            self._requeue(job)

    # ------------------------------------------------------------------ handlers

    def _never_fits(self, job: Job) -> str | None:
        cfg = self.cluster_cfg
        if job.gpu_count > cfg.gpus_per_node:
            return f"needs {job.gpu_count} GPUs, nodes have {cfg.gpus_per_node}"
        if job.gpu_type != cfg.gpu_type:
            return f"GPU type {job.gpu_type} not in cluster"
        if not self.db.has_profile(job.model, job.gpu_count):
            return f"no profile for {job.model} on {job.gpu_count} GPUs"
        if job.estimated_memory >= job.gpu_count * cfg.gpu_mem_gb:
            return "estimated memory exceeds GPU memory"
        return None

    def _on_arrival(self, job: Job) -> None:
        reason = self._never_fits(job)
        if reason:
            job.state = JobState.REJECTED
            self.rejected.append(job.job_id)
            self.log.add(self.clock, "reject", job.job_id, reason=reason)
            return
        self.log.add(self.clock, "arrival", job.job_id)
        self.queue.append(job.job_id)
        self._push_retry()

    def _on_epoch_end(self, job: Job) -> None:
        job.epochs_done += 1
        job.epoch_fraction = 0.0
        job.anchor = self.clock
        self.log.add(self.clock, "epoch_end", job.job_id, epochs=job.epochs_done, set=str(job.alloc))
        if job.epochs_done >= self.db.profile(job.model, job.gpu_count).n_epochs:
            self._push(self.clock, EventKind.JOB_DONE, job.job_id, self._version[job.job_id])
            return
        self._push(self.clock + job.epoch_time, EventKind.EPOCH_END, job.job_id, self._version[job.job_id])
        self._apply_verdict(self.policy.epoch_end(job, self.state, self.clock))

    def _on_job_done(self, job: Job) -> None:
        gs = self._evict(job)
        job.state = JobState.COMPLETED
        job.completion = self.clock
        job.epoch_fraction = 0.0
        self.log.add(self.clock, "job_done", job.job_id, set=str(gs))
        self._apply_verdict(self.policy.job_left(job.job_id, gs, self.state, self.clock))
        self._push_retry()

    def _order_key(self, job_id: str):
        job = self.jobs[job_id]
        return job.priority is not Priority.HIGH_EXCLUSIVE, job.arrival, self.rank[job_id]

    def _on_retry(self) -> None:
        self._retry_at = None
        self.queue.sort(key=self._order_key)
        waiting = []
        for pos, job_id in enumerate(self.queue):
            job = self.jobs[job_id]
            decision = self.policy.decide(job, self.state, self.clock)
            if isinstance(decision, Wait):
                if self.policy.head_of_line:
                    waiting.extend(self.queue[pos:])
                    break
                waiting.append(job_id)
                continue
            self._place(job, decision)
        self.queue = waiting

    # ------------------------------------------------------------------ public

    @property
    def finished(self) -> bool:
        return not self._heap

    def step(self) -> Event:
        """Process one event and return it; raises SimulationFinished when none remain."""
        while self._heap:
            ev = heapq.heappop(self._heap)
            if ev.kind in (EventKind.EPOCH_END, EventKind.JOB_DONE) and ev.version != self._version[ev.job_id]:
                continue
            self._advance(ev.time)
            if ev.kind is EventKind.ARRIVAL:
                self._on_arrival(self.jobs[ev.job_id])
            elif ev.kind is EventKind.EPOCH_END:
                self._on_epoch_end(self.jobs[ev.job_id])
            elif ev.kind is EventKind.JOB_DONE:
                self._on_job_done(self.jobs[ev.job_id])
            else:
                self._on_retry()
            return ev
        if self.queue:
            # nothing left to free resources: the queued jobs can never start
            for job_id in self.queue:
                self.jobs[job_id].state = JobState.REJECTED
                self.rejected.append(job_id)
                self.log.add(self.clock, "reject", job_id, reason="no placement possible")
            log.warning("%d queued jobs could never be placed", len(self.queue))
            self.queue = []
        raise SimulationFinished(f"simulation finished at t={self.clock}")

    def run(self) -> tuple[MetricsReport, EventLog]:
        while True:
            try:
                self.step()
            except SimulationFinished:
                break
        return self.report(), self.log

    def report(self) -> MetricsReport:
        n_epochs = {jid: self.db.profile(j.model, j.gpu_count).n_epochs
                    for jid, j in self.jobs.items() if j.completion is not None}
        return build_report(
            self.sched.policy.value, list(self.jobs.values()), n_epochs, self.job_energy,
            sum(self.node_energy), self.active_series, self.power_series, self.clock, self.sched.alpha,
            self.rejected, self.counts,
        )


def run(trace: Trace, sched: SchedulerConfig | None = None, cluster: ClusterConfig | None = None,
        db: ProfileDb | None = None) -> tuple[MetricsReport, EventLog]:
    return Engine(trace, sched, cluster, db).run()


def run_policy(trace: Trace, policy: Policy | str, cluster: ClusterConfig | None = None,
               db: ProfileDb | None = None, **sched_overrides) -> MetricsReport:
    sched = SchedulerConfig(policy=Policy.parse(policy), **sched_overrides)
    return Engine(trace, sched, cluster, db).run()[0]
