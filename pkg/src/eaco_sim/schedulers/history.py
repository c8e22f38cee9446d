"""Per-signature record of observed epoch times (the scheduler's H)."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

from ..errors import ContractError
from ..profiles import ProfileDb

Signature = tuple[tuple[str, ...], int]


class Provenance(str, Enum):
    SEEDED = "Seeded"
    OBSERVED = "Observed"


@dataclass(frozen=True)
class Record:
    epoch_time: float
    util: float
    provenance: Provenance


def signature(models: Iterable[str], gpu_count: int) -> Signature:
    return tuple(sorted(models)), gpu_count


@dataclass
class History:
    records: dict[Signature, dict[str, Record]] = field(default_factory=dict)

    def lookup(self, models: Iterable[str], gpu_count: int, model: str) -> Record | None:
        return self.records.get(signature(models, gpu_count), {}).get(model)

    def record(self, models: Iterable[str], gpu_count: int, model: str, epoch_time: float,
               util: float, provenance: Provenance = Provenance.OBSERVED) -> None:
        if not epoch_time > 0:
            raise ContractError(f"observed epoch time must be positive, got {epoch_time}")
        sig = signature(models, gpu_count)
        if model not in sig[0]:
            raise ContractError(f"{model!r} is not part of signature {sig}")
        entry = self.records.setdefault(sig, {})
        old = entry.get(model)
        if provenance is Provenance.SEEDED and old is not None and old.provenance is Provenance.OBSERVED:
            return
        entry[model] = Record(epoch_time, util, provenance)

    def __len__(self):
        return sum(len(v) for v in self.records.values())

    @classmethod
    def seeded(cls, db: ProfileDb) -> History:
        """History initialised with the measured profiles."""
        h = cls()
        for (model, n), prof in db.exclusive.items():
            h.record((model,), n, model, prof.sim_epoch_time, prof.avg_gpu_util, Provenance.SEEDED)
        for (models, n), prof in db.colocated.items():
            for m in set(models):
                h.record(models, n, m, db.set_epoch_time(prof), prof.avg_gpu_util, Provenance.SEEDED)
        return h
