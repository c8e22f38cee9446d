from __future__ import annotations

from dataclasses import dataclass

from ..cluster import GpuSet


@dataclass(frozen=True)
class Wait:
    pass


@dataclass(frozen=True)
class AllocateExclusive:
    gpu_set: GpuSet


@dataclass(frozen=True)
class AllocateTrial:
    gpu_set: GpuSet


@dataclass(frozen=True)
class Pack:
    """Co-locate without a trial period (packing baselines)."""
    gpu_set: GpuSet


@dataclass(frozen=True)
class Finalize:
    job_id: str
    gpu_set: GpuSet


@dataclass(frozen=True)
class Undo:
    job_id: str
    gpu_set: GpuSet
    reason: str = ""


@dataclass(frozen=True)
class Unpack:
    job_id: str
    gpu_set: GpuSet
    inflation: float = 0.0


Placement = AllocateExclusive | AllocateTrial | Pack
Decision = Wait | Placement
Verdict = Finalize | Undo | Unpack
