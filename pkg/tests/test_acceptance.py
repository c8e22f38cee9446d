"""Acceptance suite: one test (or small group) per criterion, tagged with ``criterion``.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import itertools
import json
import random
import time
from statistics import fmean

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eaco_sim.cluster import ClusterConfig, GpuSet, apply_allocation, build_cluster
from eaco_sim.engine import Engine, run_policy
from eaco_sim.metrics import normalize_report
from eaco_sim.profiles import energy_savings
from eaco_sim.schedulers import SchedulerConfig, find_candidates
from eaco_sim.workload import Trace, TraceParams, generate_trace, make_job

from conftest import MODELS, multi_count_db

POLICIES = ("fifo", "fifo_packed", "gandiva", "eaco")
CONTENTION_SEEDS = range(20)
CONTENTION = dict(n_jobs=60, arrival_rate=0.2, unbounded_fraction=0.5, deadline_slack=(1.5, 3.0))
CONTENTION_NODES = 4

EXCLUSIVE = {  # model: (total energy kWh, JCT h)
    "AlexNet": (24.73, 34.76),
    "ResNet-18": (33.69, 35.13),
    "ResNet-50": (47.87, 36.01),
    "VGG-16": (55.38, 36.13),
}
COLOCATED = {  # set: (energy kWh, avg JCT h)
    ("AlexNet", "ResNet-50"): (50.93, 36.63),
    ("AlexNet", "VGG-16"): (54.97, 36.51),
    ("ResNet-18", "VGG-16"): (60.84, 37.01),
    ("AlexNet", "ResNet-18", "ResNet-50"): (59.01, 38.28),
    ("AlexNet", "ResNet-18", "VGG-16"): (65.55, 38.26),
    ("AlexNet", "ResNet-18", "ResNet-50", "VGG-16"): (93.66, 44.21),
}


def detail(request, text):
    request.node.user_properties.append(("detail", text))


def contention_trace(db, seed):
    return generate_trace(TraceParams(seed=seed, name=f"contention-{seed}", **CONTENTION), db)


def colocated_trace(db, models):
    # simultaneous arrival; memory sized from the measured average so the 4-job set fits
    return Trace(tuple(make_job(f"j{i}", m, 0.0, db=db, estimated_memory=db.profile(m).avg_mem_util / 100 * 256)
                       for i, m in enumerate(models)))


def overprovisioned_trace(db, seed, n_jobs=20):
    return generate_trace(TraceParams(n_jobs=n_jobs, arrival_rate=0.5, seed=seed, unbounded_fraction=0.5,
                                      deadline_slack=(1.5, 3.0)), db)


@pytest.fixture(scope="module")
def contention(db):
    db.fallback  # one-time fit, not part of the timed suite
    t0 = time.perf_counter()
    reports = {}
    for seed in CONTENTION_SEEDS:
        trace = contention_trace(db, seed)
        for pol in POLICIES:
            reports[seed, pol] = run_policy(trace, pol, ClusterConfig(nodes=CONTENTION_NODES), db)
    return reports, time.perf_counter() - t0


# --------------------------------------------------------------------------- 1

@pytest.mark.criterion(1, "exclusive single-job runs reproduce the measured exclusive profiles")
@pytest.mark.parametrize("model", MODELS)
def test_c1_exclusive_reproduction(db, request, model):
    energy, jct = EXCLUSIVE[model]
    db.fallback
    t0 = time.perf_counter()
    rep = run_policy(Trace((make_job("j", model, db=db),)), "fifo", ClusterConfig(nodes=1), db)
    elapsed = time.perf_counter() - t0
    assert rep.total_energy == pytest.approx(energy, rel=0.005)
    assert rep.per_job[0].jct == pytest.approx(jct, rel=1e-9)
    assert elapsed < 1.0
    detail(request, f"{model} {rep.total_energy:.2f} kWh")


# --------------------------------------------------------------------------- 2

@pytest.mark.criterion(2, "simultaneous co-located sets reproduce the measured co-located profiles within 1%")
@pytest.mark.parametrize("models", list(COLOCATED), ids=lambda m: "+".join(m))
@pytest.mark.parametrize("policy", ["fifo_packed", "gandiva", "eaco"])
def test_c2_colocated_reproduction(db, request, models, policy):
    energy, jct = COLOCATED[models]
    rep = run_policy(colocated_trace(db, models), policy, ClusterConfig(nodes=1), db)
    assert rep.mean_active_nodes == pytest.approx(1.0)
    assert rep.total_energy == pytest.approx(energy, rel=0.01)
    assert rep.avg_jct == pytest.approx(jct, rel=0.01)
    if len(models) == 4 and policy == "eaco":
        detail(request, f"4-job set under eaco {rep.total_energy:.2f} kWh / {rep.avg_jct:.2f} h")


# --------------------------------------------------------------------------- 3

@pytest.mark.criterion(3, "co-located energy savings inside [0.29, 0.45]")
@pytest.mark.parametrize("models", list(COLOCATED), ids=lambda m: "+".join(m))
def test_c3_savings_band(db, request, models):
    s = float(f"{energy_savings(db, models):.3g}")
    assert 0.29 <= s <= 0.45
    if models in (("AlexNet", "ResNet-50"), tuple(MODELS)):
        detail(request, f"{'+'.join(m[0] for m in models)} {s}")


# --------------------------------------------------------------------------- 4, 5, 11

@pytest.mark.criterion(4, "energy EaCO <= Gandiva <= FIFO_packed <= FIFO on 20 contention traces")
def test_c4_energy_ordering(contention, request):
    reports, elapsed = contention
    bad = []
    for seed in CONTENTION_SEEDS:
        e = [reports[seed, p].total_energy for p in ("eaco", "gandiva", "fifo_packed", "fifo")]
        for lo, hi in zip(e, e[1:]):
            if lo > hi * 1.005:
                bad.append((seed, lo / hi - 1))
    ratio = fmean(reports[s, "eaco"].total_energy / reports[s, "fifo"].total_energy for s in CONTENTION_SEEDS)
    detail(request, f"mean eaco/fifo energy {ratio:.3f}, suite {elapsed:.1f} s")
    assert not bad, bad
    assert elapsed < 30.0


@pytest.mark.criterion(5, "avg JTT EaCO < FIFO on every contention trace")
def test_c5_jtt(contention, request):
    reports, _ = contention
    ratios = [reports[s, "eaco"].avg_jtt / reports[s, "fifo"].avg_jtt for s in CONTENTION_SEEDS]
    detail(request, f"eaco/fifo JTT mean {fmean(ratios):.3f}, worst {max(ratios):.3f}")
    assert all(r < 1.0 for r in ratios)


@pytest.mark.criterion(11, "mean active nodes EaCO <= every baseline on every contention trace")
def test_c11_active_nodes(contention, request):
    reports, _ = contention
    for seed in CONTENTION_SEEDS:
        mine = reports[seed, "eaco"].mean_active_nodes
        for pol in ("fifo", "fifo_packed", "gandiva"):
            assert mine <= reports[seed, pol].mean_active_nodes + 1e-9, (seed, pol)
    for pol in ("fifo", "fifo_packed", "gandiva"):
        r = fmean(reports[s, "eaco"].mean_active_nodes / reports[s, pol].mean_active_nodes
                  for s in CONTENTION_SEEDS)
        detail(request, f"vs {pol} {1 - r:.0%} fewer")


def test_contention_really_contended(contention, db):
    # offered work exceeds what 4 exclusive nodes deliver over the arrival window
    for seed in CONTENTION_SEEDS:
        trace = contention_trace(db, seed)
        work = sum(db.profile(j.model).jct for j in trace.jobs)
        assert work > CONTENTION_NODES * trace.jobs[-1].arrival
        assert contention[0][seed, "fifo"].avg_jtt > contention[0][seed, "fifo"].avg_jct


# --------------------------------------------------------------------------- 6

@pytest.mark.criterion(6, "over-provisioned runtime ratio <= 1.25; 2-job inflation <= 8%")
def test_c6_runtime_overhead(db, request):
    worst = 0.0
    for seed in range(10):
        trace = overprovisioned_trace(db, seed)
        eaco = run_policy(trace, "eaco", ClusterConfig(nodes=len(trace)), db)
        fifo = run_policy(trace, "fifo", ClusterConfig(nodes=len(trace)), db)
        assert fifo.avg_jtt == pytest.approx(fifo.avg_jct)  # no queueing: capacity covers demand
        worst = max(worst, normalize_report(eaco, fifo)["avg_runtime"])
    detail(request, f"worst runtime ratio {worst:.3f}")
    assert worst <= 1.25


@pytest.mark.criterion(6, "over-provisioned runtime ratio <= 1.25; 2-job inflation <= 8%")
@pytest.mark.parametrize("models", [m for m in COLOCATED if len(m) == 2], ids=lambda m: "+".join(m))
def test_c6_pair_inflation(db, request, models):
    rep = run_policy(colocated_trace(db, models), "eaco", ClusterConfig(nodes=1), db)
    for row in rep.per_job:
        assert row.runtime / db.profile(row.model).jct - 1 <= 0.08


# --------------------------------------------------------------------------- 7

@pytest.mark.criterion(7, "1000 random EaCO runs with slack >= 1.05: zero deadline violations")
def test_c7_deadline_safety(db, request):
    rng = np.random.default_rng(7)
    violations = trials = 0
    for i in range(1000):
        n = int(rng.integers(1, 7))
        lo = float(rng.uniform(1.05, 2.0))
        trace = generate_trace(TraceParams(n_jobs=n, arrival_rate=float(rng.uniform(0.1, 2.0)), seed=i,
                                           deadline_slack=(lo, lo + float(rng.uniform(0, 1.0)))), db)
        assert all(j.deadline < float("inf") for j in trace.jobs)
        rep = run_policy(trace, "eaco", ClusterConfig(nodes=n), db)
        violations += rep.deadline_violations
        trials += rep.counts["trials"]
    detail(request, f"{violations} violations, {trials} trials")
    assert trials > 0
    assert violations == 0


# --------------------------------------------------------------------------- 8

UNDO_SCHED = SchedulerConfig(seed_history=False, safety_margin=-0.3)


def undo_trace(db, seed):
    return generate_trace(TraceParams(n_jobs=12, arrival_rate=0.3, seed=seed, deadline_slack=(1.01, 1.15)), db)


@pytest.mark.criterion(8, "undo happens at an epoch end on its set and never loses completed epochs")
@settings(max_examples=30, deadline=None)
@given(st.integers(0, 100_000))
def test_c8_undo_invariants(db, seed):
    eng = Engine(undo_trace(db, seed), UNDO_SCHED, ClusterConfig(nodes=6), db)
    while not eng.finished:
        before = {jid: j.epochs_done for jid, j in eng.jobs.items()}
        n_undo = len(eng.log.of("undo"))
        eng.step()
        assert all(j.epochs_done >= before[jid] for jid, j in eng.jobs.items())
        for u in eng.log.of("undo")[n_undo:]:
            assert eng.jobs[u["job"]].epochs_done == u["epochs"] >= before[u["job"]]
    ends = {(r["t"], r["set"]) for r in eng.log.of("epoch_end")}
    for u in eng.log.of("undo"):
        assert (u["t"], u["set"]) in ends
    rep = eng.report()
    assert len(rep.per_job) + len(rep.rejected) == len(eng.jobs)


@pytest.mark.criterion(8, "undo happens at an epoch end on its set and never loses completed epochs")
def test_c8_undo_not_vacuous(db, request):
    undos = sum(Engine(undo_trace(db, s), UNDO_SCHED, ClusterConfig(nodes=6), db).run()[0].counts["undos"]
                for s in range(10))
    detail(request, f"{undos} undos over 10 forcing traces")
    assert undos > 0


# --------------------------------------------------------------------------- 9

def brute_force_candidates(job, state, cfg):
    """Every node-local GPU subset, filtered by alignment, thresholds and the memory test."""
    out = []
    for node in state.nodes:
        for combo in itertools.combinations(range(len(node.gpus)), job.gpu_count):
            gpus = [node.gpus[i] for i in combo]
            residents = {frozenset(g.assigned_jobs) for g in gpus}
            if len(residents) != 1:
                continue
            (res,) = residents
            gs = GpuSet(node.node_id, combo)
            if any(state.allocs[j] != gs for j in res):
                continue
            if any(g.gpu_type != job.gpu_type for g in gpus):
                continue
            if any(g.core_util >= cfg.u_threshold or g.mem_util >= cfg.mem_threshold for g in gpus):
                continue
            if len(res) >= cfg.max_coloc:
                continue
            if sum(g.total_mem - g.peak_mem_used for g in gpus) <= job.estimated_memory:
                continue
            out.append((-fmean(g.core_util for g in gpus), gs))
    return [gs for _, gs in sorted(out)]


def random_state(rnd, db):
    per_node = rnd.choice([2, 4, 8])
    state = build_cluster(ClusterConfig(nodes=rnd.randint(1, 2), gpus_per_node=per_node))
    for node in state.nodes:
        if rnd.random() < 0.2:
            for g in node.gpus:
                g.gpu_type = "P100"
    counts = [c for c in (1, 2, 4, 8) if c <= per_node]
    for i in range(rnd.randint(0, 10)):
        k = rnd.choice(counts)
        job = make_job(f"r{i}", rnd.choice(MODELS), db=db, gpu_count=k,
                       estimated_memory=rnd.uniform(0.1, 0.6) * k * 32)
        node = rnd.choice(state.nodes)
        shared = [gs for gs in node.groups if len(gs) == k and len(state.jobs_on(gs)) < 4]
        free = [g.gpu_id for g in node.gpus if not g.assigned_jobs]
        if shared and rnd.random() < 0.5:
            gs = rnd.choice(shared)
        elif len(free) >= k:
            gs = GpuSet(node.node_id, tuple(sorted(rnd.sample(free, k))))
        else:
            continue
        apply_allocation(state, job, gs, db)
        job.alloc = gs
    return state, counts


@pytest.mark.criterion(9, "find_candidates equals brute force on 200 random states")
def test_c9_candidates_oracle(request):
    db = multi_count_db()
    rnd = random.Random(9)
    nonempty = 0
    for _ in range(200):
        state, counts = random_state(rnd, db)
        cfg = SchedulerConfig(u_threshold=rnd.uniform(20, 100), mem_threshold=rnd.uniform(20, 100),
                              max_coloc=rnd.randint(1, 4))
        k = rnd.choice(counts)
        job = make_job("q", rnd.choice(MODELS), db=db, gpu_count=k, estimated_memory=rnd.uniform(0.05, 0.9) * k * 32)
        expected = brute_force_candidates(job, state, cfg)
        assert find_candidates(job, state, cfg) == expected
        nonempty += bool(expected)
    detail(request, f"{nonempty}/200 states with candidates")
    assert nonempty > 20


# --------------------------------------------------------------------------- 10

def summary_bytes(rep):
    return json.dumps(rep.to_dict(), sort_keys=True, indent=1).encode()


@pytest.mark.criterion(10, "byte-identical summary JSON across reruns")
def test_c10_determinism_contention(db, contention):
    reports, _ = contention
    for seed in CONTENTION_SEEDS:
        trace = contention_trace(db, seed)
        for pol in POLICIES:
            again = run_policy(trace, pol, ClusterConfig(nodes=CONTENTION_NODES), db)
            assert summary_bytes(again) == summary_bytes(reports[seed, pol])


@pytest.mark.criterion(10, "byte-identical summary JSON across reruns")
def test_c10_determinism_other_traces(db):
    traces = [(colocated_trace(db, m), 1) for m in COLOCATED]
    traces += [(overprovisioned_trace(db, s), 20) for s in range(3)]
    traces += [(undo_trace(db, s), 6) for s in range(3)]
    for trace, nodes in traces:
        for pol in POLICIES:
            sched = UNDO_SCHED if nodes == 6 and pol == "eaco" else SchedulerConfig(policy=pol)
            a, b = (Engine(trace, sched, ClusterConfig(nodes=nodes), db).run()[0] for _ in range(2))
            assert summary_bytes(a) == summary_bytes(b)
