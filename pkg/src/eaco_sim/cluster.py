"""Cluster state, node power and energy integration.

Node power decomposes into a server part driven by CPU utilisation and a GPU
part per co-located group::

    P_node = P_idle + (P_peak - P_idle) * cpu_util / 100 + sum_groups(P_set - base)

While training, ``cpu_util`` is pinned to the load at which the server part
equals the fitted per-node base power, so a node hosting a measured set draws
exactly that set's measured power.

Co-location is gang-aligned: jobs that share GPUs hold exactly the same GPU
set, so every GPU in a group shows the same utilisation.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .errors import ConfigError, ContractError
from .profiles import ProfileDb, ground_truth_power, ground_truth_util
from .workload import DEFAULT_GPU_MEM_GB, Job, Priority

log = logging.getLogger(__name__)


class PowerState(str, Enum):
    ACTIVE = "Active"
    LOW_POWER = "LowPower"


@dataclass(frozen=True, order=True)
class GpuSet:
    node_id: int
    gpus: tuple[int, ...]

    def __len__(self):
        return len(self.gpus)

    def __str__(self):
        return f"n{self.node_id}:{','.join(map(str, self.gpus))}"


@dataclass
class Gpu:
    gpu_id: int
    node_id: int
    gpu_type: str = "V100"
    total_mem: float = DEFAULT_GPU_MEM_GB
    core_util: float = 0.0
    mem_util: float = 0.0
    peak_mem_used: float = 0.0
    assigned_jobs: set[str] = field(default_factory=set)


@dataclass
class Node:
    node_id: int
    gpus: list[Gpu]
    cpu_util: float = 0.0
    power_state: PowerState = PowerState.LOW_POWER
    server_idle_power: float = 300.0
    server_peak_power: float = 900.0
    lowpower_draw: float = 100.0
    # GPU set -> sorted model names of its residents
    groups: dict[GpuSet, tuple[str, ...]] = field(default_factory=dict)

    @property
    def has_jobs(self) -> bool:
        return bool(self.groups)

    @property
    def gpu_count(self) -> int:
        return len(self.gpus)


@dataclass
class ClusterConfig:
    nodes: int = 4
    gpus_per_node: int = 8
    gpu_type: str = "V100"
    gpu_mem_gb: float = DEFAULT_GPU_MEM_GB
    server_idle_power: float = 300.0
    server_peak_power: float = 900.0
    lowpower_draw: float = 100.0

    def __post_init__(self):
        if self.nodes < 1 or self.gpus_per_node < 1:
            raise ConfigError("cluster needs at least one node with at least one GPU")
        if self.server_idle_power > self.server_peak_power:
            raise ConfigError("server_idle_power must not exceed server_peak_power")
        if min(self.server_idle_power, self.lowpower_draw, self.gpu_mem_gb) < 0:
            raise ConfigError("power and memory constants must be non-negative")


@dataclass
class ClusterState:
    nodes: list[Node]
    clock: float = 0.0
    jobs: dict[str, Job] = field(default_factory=dict)  # resident jobs only
    allocs: dict[str, GpuSet] = field(default_factory=dict)

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def gpus_of(self, gpu_set: GpuSet) -> list[Gpu]:
        node = self.nodes[gpu_set.node_id]
        return [node.gpus[i] for i in gpu_set.gpus]

    def jobs_on(self, gpu_set: GpuSet) -> list[Job]:
        ids = sorted(self.gpus_of(gpu_set)[0].assigned_jobs) if gpu_set.gpus else []
        return [self.jobs[i] for i in ids if self.allocs.get(i) == gpu_set]

    def set_util(self, gpu_set: GpuSet) -> float:
        gpus = self.gpus_of(gpu_set)
        return sum(g.core_util for g in gpus) / len(gpus)

    def is_idle(self, gpu_set: GpuSet) -> bool:
        return all(not g.assigned_jobs for g in self.gpus_of(gpu_set))

    def groups(self) -> list[GpuSet]:
        return [gs for node in self.nodes for gs in node.groups]

    def active_nodes(self) -> int:
        return sum(1 for n in self.nodes if n.power_state is PowerState.ACTIVE)

    def has_exclusive_job(self, gpu_set: GpuSet) -> bool:
        return any(j.priority is Priority.HIGH_EXCLUSIVE for j in self.jobs_on(gpu_set))

    def snapshot(self) -> ClusterState:
        return copy.deepcopy(self)


def build_cluster(cfg: ClusterConfig) -> ClusterState:
    nodes = []
    for n in range(cfg.nodes):
        gpus = [Gpu(i, n, cfg.gpu_type, cfg.gpu_mem_gb) for i in range(cfg.gpus_per_node)]
        nodes.append(Node(n, gpus, server_idle_power=cfg.server_idle_power,
                          server_peak_power=cfg.server_peak_power, lowpower_draw=cfg.lowpower_draw))
    return ClusterState(nodes)


def training_cpu_util(node: Node, db: ProfileDb) -> float:
    """CPU load at which the server part of node power equals the fitted base power."""
    span = node.server_peak_power - node.server_idle_power
    if span <= 0:
        return 100.0
    util = (db.fallback.base_power - node.server_idle_power) / span * 100.0
    if not 0.0 <= util <= 100.0:
        log.warning("node %d: base power %.1f W outside the server power range; clamping CPU load",
                    node.node_id, db.fallback.base_power)
    return min(100.0, max(0.0, util))


def node_power(node: Node, db: ProfileDb) -> float:
    if node.power_state is PowerState.LOW_POWER:
        return node.lowpower_draw
    server = node.server_idle_power + (node.server_peak_power - node.server_idle_power) * node.cpu_util / 100.0
    base = db.fallback.base_power
    gpu_part = 0.0
    for gpu_set, models in node.groups.items():
        gpu_part += ground_truth_power(db, models, len(gpu_set)) - base
    return server + gpu_part


def accumulate_energy(
    state: ClusterState,
    dt: float,
    db: ProfileDb,
    powers: Sequence[float] | None = None,
) -> list[float]:
    """Per-node kWh drawn over ``dt`` hours at the current (constant) power."""
    if dt < 0:
        raise ContractError(f"energy interval must be non-negative, got {dt}")
    if powers is None:
        powers = [node_power(n, db) for n in state.nodes]
    return [p * dt / 1000.0 for p in powers]


def _check_set(state: ClusterState, job: Job, gpu_set: GpuSet) -> None:
    if not 0 <= gpu_set.node_id < len(state.nodes):
        raise ContractError(f"{gpu_set}: no such node")
    node = state.nodes[gpu_set.node_id]
    if len(set(gpu_set.gpus)) != len(gpu_set.gpus) or any(not 0 <= i < node.gpu_count for i in gpu_set.gpus):
        raise ContractError(f"{gpu_set}: invalid GPU indices")
    if len(gpu_set) != job.gpu_count:
        raise ContractError(f"{job.job_id} needs {job.gpu_count} GPUs, got {len(gpu_set)}")
    residents = {frozenset(g.assigned_jobs) for g in state.gpus_of(gpu_set)}
    if len(residents) != 1:
        raise ContractError(f"{gpu_set}: GPUs host different job groups; co-location must be gang-aligned")
    for other in next(iter(residents)):
        if state.allocs[other] != gpu_set:
            raise ContractError(f"{gpu_set}: partially overlaps the GPU set of {other}")


def refresh_set(state: ClusterState, gpu_set: GpuSet, db: ProfileDb) -> None:
    """Recompute utilisation and memory of a set from its current residents."""
    node = state.nodes[gpu_set.node_id]
    members = state.jobs_on(gpu_set)
    gpus = state.gpus_of(gpu_set)
    if not members:
        node.groups.pop(gpu_set, None)
        for g in gpus:
            g.core_util = g.mem_util = g.peak_mem_used = 0.0
    else:
        models = tuple(sorted(j.model for j in members))
        node.groups[gpu_set] = models
        core, mem = ground_truth_util(db, models, len(gpu_set))
        for g in gpus:
            g.core_util = core
            g.mem_util = mem
            g.peak_mem_used = min(g.total_mem, sum(j.estimated_memory / j.gpu_count for j in members))
    node.cpu_util = training_cpu_util(node, db) if node.groups else 0.0


def apply_allocation(state: ClusterState, job: Job, gpu_set: GpuSet, db: ProfileDb) -> ClusterState:
    if job.job_id in state.allocs:
        raise ContractError(f"{job.job_id} is already allocated to {state.allocs[job.job_id]}")
    _check_set(state, job, gpu_set)
    state.jobs[job.job_id] = job
    state.allocs[job.job_id] = gpu_set
    for g in state.gpus_of(gpu_set):
        g.assigned_jobs.add(job.job_id)
    node = state.nodes[gpu_set.node_id]
    node.power_state = PowerState.ACTIVE
    refresh_set(state, gpu_set, db)
    return state


def remove_allocation(state: ClusterState, job_id: str, db: ProfileDb, *, power_down_idle: bool = True) -> ClusterState:
    if job_id not in state.allocs:
        raise ContractError(f"{job_id} is not allocated")
    gpu_set = state.allocs.pop(job_id)
    for g in state.gpus_of(gpu_set):
        g.assigned_jobs.discard(job_id)
    del state.jobs[job_id]
    refresh_set(state, gpu_set, db)
    node = state.nodes[gpu_set.node_id]
    if power_down_idle and not node.groups:
        node.power_state = PowerState.LOW_POWER
    return state
