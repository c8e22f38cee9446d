"""Energy-aware co-allocation with trial monitoring and undo.

A placement is blocked only when it *causes* a deadline miss: a resident that
would meet its deadline on the current set but not after the newcomer joins,
or a newcomer that would meet its deadline alone but not on the shared set.
Jobs already doomed do not veto a placement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..cluster import ClusterState, GpuSet
from ..errors import ContractError, PredictionError, UnknownModelError
from ..profiles import ProfileDb
from ..workload import Job, Priority
from .candidates import SetFilter, find_candidates, first_idle_set
from .config import SchedulerConfig
from .decisions import AllocateExclusive, AllocateTrial, Decision, Finalize, Undo, Wait
from .history import History, Provenance

EPS = 1e-9


def predicted_epoch_time(models: Sequence[str], model: str, gpu_count: int, history: History | None,
                         db: ProfileDb, cfg: SchedulerConfig) -> float:
    """Recorded epoch time if the exact signature is known, else a padded fallback estimate."""
    rec = history.lookup(models, gpu_count, model) if history is not None else None
    if rec is not None:
        return rec.epoch_time
    try:
        profs = [db.profile(m, gpu_count) for m in models]
        own = db.profile(model, gpu_count)
    except UnknownModelError as exc:
        raise PredictionError(str(exc)) from exc
    slowdown = 1.0
    if len(models) > 1:
        slowdown = db.fallback.slowdown(sum(p.avg_gpu_util for p in profs), len(profs))
    return own.epoch_time * slowdown * (1.0 + cfg.safety_margin)


def remaining_epochs(job: Job, db: ProfileDb, now: float, *, keep_partial: bool = True) -> float:
    try:
        n = db.profile(job.model, job.gpu_count).n_epochs
    except UnknownModelError as exc:
        raise PredictionError(str(exc)) from exc
    done = job.epochs_done + (job.fraction_at(now) if keep_partial else 0.0)
    return max(0.0, n - done)


def predict_jct(jobs: Sequence[Job], gpu_set: GpuSet | int, history: History | None, db: ProfileDb,
                cfg: SchedulerConfig, now: float = 0.0) -> dict[str, float]:
    """Predicted completion time of every job if ``jobs`` share ``gpu_set`` from ``now`` on."""
    gpu_count = gpu_set if isinstance(gpu_set, int) else len(gpu_set)
    models = [j.model for j in jobs]
    out = {}
    for j in jobs:
        e = predicted_epoch_time(models, j.model, gpu_count, history, db, cfg)
        out[j.job_id] = now + remaining_epochs(j, db, now) * e
    return out


def deadline_blockers(residents: Sequence[Job], job: Job, gpu_set: GpuSet, history: History | None,
                      db: ProfileDb, cfg: SchedulerConfig, now: float) -> list[str]:
    """Ids of jobs whose deadline the placement of ``job`` would break."""
    together = predict_jct([*residents, job], gpu_set, history, db, cfg, now)
    blockers = []
    if any(not k.unbounded for k in residents):
        apart = predict_jct(residents, gpu_set, history, db, cfg, now)
        for k in residents:
            if not k.unbounded and together[k.job_id] > k.deadline + EPS and apart[k.job_id] <= k.deadline + EPS:
                blockers.append(k.job_id)
    if not job.unbounded and together[job.job_id] > job.deadline + EPS:
        alone = now + remaining_epochs(job, db, now, keep_partial=False) * predicted_epoch_time(
            [job.model], job.model, len(gpu_set), history, db, cfg)
        if alone <= job.deadline + EPS:
            blockers.append(job.job_id)
    return blockers


@dataclass
class TrialState:
    job_id: str
    gpu_set: GpuSet
    start: float
    epochs_awaited: set[str]
    rejected_sets: list[GpuSet] = field(default_factory=list)


def eaco_on_arrival(job: Job, state: ClusterState, history: History | None, cfg: SchedulerConfig,
                    db: ProfileDb, now: float = 0.0, exclude: SetFilter | None = None) -> Decision:
    if job.priority is Priority.HIGH_EXCLUSIVE:
        gs = first_idle_set(job, state)
        return AllocateExclusive(gs) if gs else Wait()
    for gs in find_candidates(job, state, cfg, exclude):
        residents = state.jobs_on(gs)
        if not residents:
            return AllocateExclusive(gs)
        if not deadline_blockers(residents, job, gs, history, db, cfg, now):
            return AllocateTrial(gs)
    gs = first_idle_set(job, state)
    return AllocateExclusive(gs) if gs else Wait()


def eaco_on_epoch(trial: TrialState, observed: Mapping[str, float], state: ClusterState,
                  history: History, cfg: SchedulerConfig, db: ProfileDb, now: float) -> Finalize | Undo | None:
    """Record the observed epochs, then finalize, undo, or keep watching."""
    members = state.jobs_on(trial.gpu_set)
    by_id = {j.job_id: j for j in members}
    models = [j.model for j in members]
    for job_id, epoch_time in observed.items():
        job = by_id.get(job_id)
        if job is None or job_id not in trial.epochs_awaited:
            raise ContractError(f"{job_id} is not awaited by the trial on {trial.gpu_set}")
        if job.epoch_fraction != 0.0 or abs(job.anchor - now) > EPS:
            raise ContractError(f"{job_id} is not at an epoch boundary at t={now}")
        history.record(models, len(trial.gpu_set), job.model, epoch_time, state.set_util(trial.gpu_set))
        trial.epochs_awaited.discard(job_id)
    residents = [j for j in members if j.job_id != trial.job_id]
    blockers = deadline_blockers(residents, by_id[trial.job_id], trial.gpu_set, history, db, cfg, now)
    if blockers:
        return Undo(trial.job_id, trial.gpu_set, "projected miss: " + ",".join(blockers))
    if not trial.epochs_awaited:
        return Finalize(trial.job_id, trial.gpu_set)
    return None


def _resident_key(state: ClusterState, gs: GpuSet, skip: str | None = None) -> tuple[GpuSet, frozenset[str]]:
    return gs, frozenset(j.job_id for j in state.jobs_on(gs) if j.job_id != skip)


class EacoPolicy:
    name = "eaco"
    head_of_line = False

    def __init__(self, cfg: SchedulerConfig, db: ProfileDb, history: History | None = None):
        self.cfg = cfg
        self.db = db
        if history is None:
            history = History.seeded(db) if cfg.seed_history else History()
        self.history = history
        self.trials: dict[GpuSet, TrialState] = {}
        # (set, residents) pairs a job was undone from; retried once residents change
        self.rejected: dict[str, set[tuple[GpuSet, frozenset[str]]]] = {}

    def excluded(self, job: Job, state: ClusterState) -> SetFilter:
        rejected = self.rejected.get(job.job_id, set())

        def f(gs: GpuSet) -> bool:
            if gs in self.trials or state.has_exclusive_job(gs):
                return True
            return bool(rejected) and _resident_key(state, gs) in rejected
        return f

    def decide(self, job: Job, state: ClusterState, now: float) -> Decision:
        return eaco_on_arrival(job, state, self.history, self.cfg, self.db, now, self.excluded(job, state))

    def placed(self, job: Job, decision: Decision, state: ClusterState, now: float) -> None:
        if isinstance(decision, AllocateTrial):
            gs = decision.gpu_set
            tried = sorted(g for g, _ in self.rejected.get(job.job_id, ()))
            self.trials[gs] = TrialState(job.job_id, gs, now, {j.job_id for j in state.jobs_on(gs)}, tried)

    def epoch_end(self, job: Job, state: ClusterState, now: float) -> Finalize | Undo | None:
        gs = state.allocs[job.job_id]
        trial = self.trials.get(gs)
        if trial is None or job.job_id not in trial.epochs_awaited:
            models = state.nodes[gs.node_id].groups[gs]
            rec = self.history.lookup(models, len(gs), job.model)
            if rec is None or rec.epoch_time != job.epoch_time or rec.provenance is not Provenance.OBSERVED:
                self.history.record(models, len(gs), job.model, job.epoch_time, state.set_util(gs))
            return None
        verdict = eaco_on_epoch(trial, {job.job_id: job.epoch_time}, state, self.history, self.cfg, self.db, now)
        if verdict is not None:
            del self.trials[gs]
        if isinstance(verdict, Undo):
            self.rejected.setdefault(trial.job_id, set()).add(_resident_key(state, gs, skip=trial.job_id))
        return verdict

    def job_left(self, job_id: str, gs: GpuSet, state: ClusterState, now: float) -> Finalize | None:
        trial = self.trials.get(gs)
        if trial is None:
            return None
        if job_id == trial.job_id:
            del self.trials[gs]
            return None
        trial.epochs_awaited.discard(job_id)
        if not trial.epochs_awaited:
            del self.trials[gs]
            return Finalize(trial.job_id, gs)
        return None

    def in_trial(self, gs: GpuSet) -> bool:
        return gs in self.trials

