"""Baseline policies: exclusive FIFO, FIFO with packing, and a Gandiva-like packer.

The Gandiva-like policy is a two-rule simplification: pack onto the least
utilised candidate, and unpack the newest job when its first epoch shows the
set running more than ``introspection_threshold`` slower than exclusive.
"""

from __future__ import annotations

from statistics import fmean

from ..cluster import ClusterState, GpuSet
from ..profiles import ProfileDb
from ..workload import Job, Priority
from .candidates import SetFilter, find_candidates, first_idle_set
from .config import SchedulerConfig
from .decisions import AllocateExclusive, Decision, Pack, Unpack, Wait


def fifo_schedule(job: Job, state: ClusterState) -> Decision:
    gs = first_idle_set(job, state)
    return AllocateExclusive(gs) if gs else Wait()


def fifo_packed_schedule(job: Job, state: ClusterState, cfg: SchedulerConfig,
                         exclude: SetFilter | None = None) -> Decision:
    gs = first_idle_set(job, state)
    if gs is not None:
        return AllocateExclusive(gs)
    if job.priority is Priority.HIGH_EXCLUSIVE:
        return Wait()
    cands = find_candidates(job, state, cfg, exclude)
    return Pack(cands[0]) if cands else Wait()


def gandiva_schedule(job: Job, state: ClusterState, cfg: SchedulerConfig,
                     exclude: SetFilter | None = None) -> Decision:
    gs = first_idle_set(job, state)
    if gs is not None:
        return AllocateExclusive(gs)
    if job.priority is Priority.HIGH_EXCLUSIVE:
        return Wait()
    cands = find_candidates(job, state, cfg, exclude)
    if not cands:
        return Wait()
    return Pack(min(cands, key=lambda g: (state.set_util(g), g)))


def set_inflation(state: ClusterState, gs: GpuSet, db: ProfileDb) -> float:
    """Mean epoch time on the set relative to the members' mean exclusive epoch time, minus one."""
    members = state.jobs_on(gs)
    shared = fmean(j.epoch_time for j in members)
    alone = fmean(db.profile(j.model, j.gpu_count).sim_epoch_time for j in members)
    return shared / alone - 1.0


class FifoPolicy:
    name = "fifo"
    head_of_line = True

    def __init__(self, cfg: SchedulerConfig, db: ProfileDb):
        self.cfg = cfg

    def decide(self, job: Job, state: ClusterState, now: float) -> Decision:
        return fifo_schedule(job, state)

    def placed(self, job, decision, state, now):
        pass

    def epoch_end(self, job, state, now):
        return None

    def job_left(self, job_id, gs, state, now):
        return None

    def in_trial(self, gs):
        return False


class FifoPackedPolicy(FifoPolicy):
    name = "fifo_packed"
    head_of_line = False

    def decide(self, job, state, now):
        return fifo_packed_schedule(job, state, self.cfg, state.has_exclusive_job)


class GandivaPolicy(FifoPolicy):
    name = "gandiva"
    head_of_line = False

    def __init__(self, cfg: SchedulerConfig, db: ProfileDb):
        super().__init__(cfg, db)
        self.db = db
        self.newest: dict[GpuSet, str] = {}  # set -> packed job awaiting its first epoch
        self.rejected: dict[str, set[tuple[GpuSet, frozenset[str]]]] = {}

    def decide(self, job, state, now):
        rejected = self.rejected.get(job.job_id, set())

        def exclude(gs):
            if state.has_exclusive_job(gs):
                return True
            return bool(rejected) and (gs, frozenset(j.job_id for j in state.jobs_on(gs))) in rejected
        return gandiva_schedule(job, state, self.cfg, exclude)

    def placed(self, job, decision, state, now):
        if isinstance(decision, Pack):
            self.newest[decision.gpu_set] = job.job_id
        else:
            self.newest.pop(decision.gpu_set, None)

    def epoch_end(self, job, state, now):
        gs = state.allocs[job.job_id]
        if self.newest.get(gs) != job.job_id:
            return None
        del self.newest[gs]
        inflation = set_inflation(state, gs, self.db)
        if inflation > self.cfg.introspection_threshold:
            others = frozenset(j.job_id for j in state.jobs_on(gs) if j.job_id != job.job_id)
            self.rejected.setdefault(job.job_id, set()).add((gs, others))
            return Unpack(job.job_id, gs, inflation)
        return None

    def job_left(self, job_id, gs, state, now):
        if self.newest.get(gs) == job_id:
            del self.newest[gs]
        return None
