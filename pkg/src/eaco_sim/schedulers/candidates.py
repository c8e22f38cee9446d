"""Candidate GPU sets for a queued job.

Sets are node-local and gang-aligned: either an existing co-location group of
the right size or a combination of GPUs that host nothing.
"""

from __future__ import annotations

from itertools import combinations
from typing import Callable

from ..cluster import ClusterState, GpuSet
from ..workload import Job
from .config import SchedulerConfig

SetFilter = Callable[[GpuSet], bool]


def _passes(state: ClusterState, job: Job, gpu_set: GpuSet, cfg: SchedulerConfig) -> bool:
    gpus = state.gpus_of(gpu_set)
    if any(g.gpu_type != job.gpu_type for g in gpus):
        return False
    if any(g.core_util >= cfg.u_threshold or g.mem_util >= cfg.mem_threshold for g in gpus):
        return False
    if len(gpus[0].assigned_jobs) >= cfg.max_coloc:
        return False
    avail = sum(g.total_mem - g.peak_mem_used for g in gpus)
    return avail > job.estimated_memory


def enumerate_sets(state: ClusterState, size: int) -> list[GpuSet]:
    out = []
    for node in state.nodes:
        out.extend(gs for gs in node.groups if len(gs) == size)
        free = [g.gpu_id for g in node.gpus if not g.assigned_jobs]
        out.extend(GpuSet(node.node_id, combo) for combo in combinations(free, size))
    return out


def find_candidates(job: Job, state: ClusterState, cfg: SchedulerConfig,
                    exclude: SetFilter | None = None) -> list[GpuSet]:
    """Passing sets, busiest first; ties broken by (node, gpus)."""
    found = [
        gs for gs in enumerate_sets(state, job.gpu_count)
        if _passes(state, job, gs, cfg) and not (exclude and exclude(gs))
    ]
    found.sort(key=lambda gs: (-state.set_util(gs), gs))
    return found


def first_idle_set(job: Job, state: ClusterState) -> GpuSet | None:
    for node in state.nodes:
        free = [g for g in node.gpus if not g.assigned_jobs and g.gpu_type == job.gpu_type]
        if len(free) >= job.gpu_count:
            combo = free[: job.gpu_count]
            if sum(g.total_mem for g in combo) > job.estimated_memory:
                return GpuSet(node.node_id, tuple(g.gpu_id for g in combo))
    return None
