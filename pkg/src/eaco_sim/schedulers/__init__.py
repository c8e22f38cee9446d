from ..profiles import ProfileDb
from .baselines import (
    FifoPackedPolicy, FifoPolicy, GandivaPolicy, fifo_packed_schedule, fifo_schedule, gandiva_schedule,
    set_inflation,
)
from .candidates import enumerate_sets, find_candidates, first_idle_set
from .config import Policy, SchedulerConfig
from .decisions import AllocateExclusive, AllocateTrial, Finalize, Pack, Undo, Unpack, Wait
from .eaco import (
    EacoPolicy, TrialState, deadline_blockers, eaco_on_arrival, eaco_on_epoch, predict_jct, predicted_epoch_time,
)
from .history import History, Provenance, Record, signature

_POLICIES = {
    Policy.FIFO: FifoPolicy,
    Policy.FIFO_PACKED: FifoPackedPolicy,
    Policy.GANDIVA: GandivaPolicy,
    Policy.EACO: EacoPolicy,
}


def make_policy(cfg: SchedulerConfig, db: ProfileDb):
    return _POLICIES[cfg.policy](cfg, db)


__all__ = [
    "AllocateExclusive", "AllocateTrial", "EacoPolicy", "FifoPackedPolicy", "FifoPolicy", "Finalize",
    "GandivaPolicy", "History", "Pack", "Policy", "Provenance", "Record", "SchedulerConfig", "TrialState",
    "Undo", "Unpack", "Wait", "deadline_blockers", "eaco_on_arrival", "eaco_on_epoch", "enumerate_sets",
    "fifo_packed_schedule", "fifo_schedule", "find_candidates", "first_idle_set", "gandiva_schedule",
    "make_policy", "predict_jct", "predicted_epoch_time", "set_inflation", "signature",
]
