"""Discrete-event simulator of energy-aware co-allocation of training jobs on GPU clusters."""

from .cluster import ClusterConfig, ClusterState, GpuSet, build_cluster, node_power
from .engine import Engine, EventKind, EventLog, run, run_policy
from .metrics import MetricsReport, emit, normalize_report, objective_value
from .profiles import ProfileDb, default_db, load_profiles
from .schedulers import Policy, SchedulerConfig
from .workload import Job, Priority, Trace, TraceParams, generate_trace, load_trace, make_job, save_trace

__version__ = "0.1.0"

__all__ = [
    "ClusterConfig", "ClusterState", "Engine", "EventKind", "EventLog", "GpuSet", "Job", "MetricsReport",
    "Policy", "Priority", "ProfileDb", "SchedulerConfig", "Trace", "TraceParams", "build_cluster",
    "default_db", "emit", "generate_trace", "load_profiles", "load_trace", "make_job", "node_power",
    "normalize_report", "objective_value", "run", "run_policy", "save_trace",
]
