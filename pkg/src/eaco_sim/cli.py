"""Command line entry point: ``eaco-sim {run,compare,gen-trace}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .engine import Engine
from .errors import ConfigError, EacoSimError
from .metrics import emit, normalize_report
from .schedulers import Policy, SchedulerConfig
from .workload import TraceParams, generate_trace, save_trace

OUTPUT_ENV = "EACO_OUTPUT_DIR"
ALL_POLICIES = [p.value for p in Policy]


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "policy", None):
        cfg.scheduler = dataclasses.replace(cfg.scheduler, policy=Policy.parse(args.policy))
    if getattr(args, "trace", None):
        cfg.trace_path, cfg.trace_params = Path(args.trace), None
    if getattr(args, "nodes", None):
        cfg.cluster = dataclasses.replace(cfg.cluster, nodes=args.nodes)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        if cfg.trace_params is not None:
            cfg.trace_params = dataclasses.replace(cfg.trace_params, seed=args.seed)
    for name in ("alpha", "u_threshold", "mem_threshold", "safety_margin", "max_coloc"):
        value = getattr(args, name, None)
        if value is not None:
            cfg.scheduler = dataclasses.replace(cfg.scheduler, **{name: value})
    if getattr(args, "output_dir", None):
        cfg.output_dir = Path(args.output_dir)
    elif os.environ.get(OUTPUT_ENV):
        cfg.output_dir = Path(os.environ[OUTPUT_ENV])
    return cfg


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return _apply_overrides(cfg, args)


def _simulate(cfg: RunConfig, sched: SchedulerConfig, db, trace, out_dir: Path, events: bool):
    engine = Engine(trace, sched, cfg.cluster, db)
    report, log = engine.run()
    emit(report, out_dir)
    if events:
        log.write(out_dir / "events.jsonl")
    return report


def cmd_run(args) -> int:
    cfg = _load(args)
    db = cfg.load_db()
    trace = cfg.build_trace(db)
    report = _simulate(cfg, cfg.scheduler, db, trace, cfg.output_dir, args.events)
    print(report.summary_line())
    return 0


def comparison_table(rows: list[dict]) -> str:
    cols = ["policy", "total_energy", "avg_runtime", "avg_jtt", "mean_active_nodes"]
    cells = [cols] + [[r["policy"]] + [f"{r[c]:.4f}" for c in cols[1:]] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths)))
             for row in cells]
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    cfg = _load(args)
    policies = [Policy.parse(p) for p in args.policies.split(",") if p.strip()]
    if not policies:
        raise EacoSimError("no policies given")
    db = cfg.load_db()
    trace = cfg.build_trace(db)
    reports = {}
    for pol in dict.fromkeys([Policy.FIFO, *policies]):
        sched = dataclasses.replace(cfg.scheduler, policy=pol)
        reports[pol] = _simulate(cfg, sched, db, trace, cfg.output_dir / pol.value, args.events)
    base = reports[Policy.FIFO]
    rows = []
    for pol in policies:
        ratios = normalize_report(reports[pol], base)
        rows.append({"policy": pol.value, **ratios,
                     "absolute": {"total_energy": reports[pol].total_energy, "avg_runtime": reports[pol].avg_runtime,
                                  "avg_jtt": reports[pol].avg_jtt,
                                  "mean_active_nodes": reports[pol].mean_active_nodes,
                                  "deadline_violations": reports[pol].deadline_violations}})
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    doc = {"baseline": Policy.FIFO.value, "trace": trace.name, "rows": rows}
    (cfg.output_dir / "comparison.json").write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    table = comparison_table(rows)
    (cfg.output_dir / "comparison.txt").write_text(table)
    print(f"normalized to {Policy.FIFO.value} on trace {trace.name!r} ({len(trace)} jobs)")
    print(table, end="")
    return 0


def cmd_gen_trace(args) -> int:
    db = None
    params = TraceParams()
    if args.config:
        cfg = load_config(args.config)
        db = cfg.load_db()
        params = cfg.trace_params or TraceParams(seed=cfg.seed)
    overrides = {
        "n_jobs": args.n_jobs, "arrival_rate": args.rate, "seed": args.seed, "name": args.name,
        "unbounded_fraction": args.unbounded_fraction, "high_priority_fraction": args.high_priority_fraction,
    }
    if args.slack is not None:
        if len(args.slack) > 2:
            raise ConfigError("--slack takes one value or a lo hi pair")
        overrides["deadline_slack"] = args.slack[0] if len(args.slack) == 1 else tuple(args.slack)
    if args.mix is not None:
        overrides["model_mix"] = json.loads(args.mix)
    params = dataclasses.replace(params, **{k: v for k, v in overrides.items() if v is not None})
    trace = generate_trace(params, db)
    save_trace(trace, args.out)
    print(f"wrote {len(trace)} jobs to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eaco-sim", description="GPU cluster co-allocation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", help="run config (JSON)")
        p.add_argument("--trace", help="JSONL trace, overrides the config")
        p.add_argument("--nodes", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--output-dir", "-o", help=f"output directory (also ${OUTPUT_ENV})")
        p.add_argument("--alpha", type=float)
        p.add_argument("--u-threshold", dest="u_threshold", type=float)
        p.add_argument("--mem-threshold", dest="mem_threshold", type=float)
        p.add_argument("--safety-margin", dest="safety_margin", type=float)
        p.add_argument("--max-coloc", dest="max_coloc", type=int)
        p.add_argument("--events", action="store_true", help="also write events.jsonl")

    p = sub.add_parser("run", help="simulate one policy")
    common(p)
    p.add_argument("--policy", choices=ALL_POLICIES)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several policies on one trace, normalised to FIFO")
    common(p)
    p.add_argument("--policies", default=",".join(ALL_POLICIES))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gen-trace", help="write a synthetic JSONL trace")
    p.add_argument("--config", "-c", help="take generator parameters from this run config")
    p.add_argument("--out", required=True)
    p.add_argument("--n-jobs", type=int)
    p.add_argument("--rate", type=float, help="arrivals per hour")
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.add_argument("--slack", type=float, nargs="+", help="deadline slack, or a lo hi range")
    p.add_argument("--unbounded-fraction", type=float)
    p.add_argument("--high-priority-fraction", type=float)
    p.add_argument("--mix", help='model weights as JSON, e.g. {"VGG-16": 2, "AlexNet": 1}')
    p.set_defaults(func=cmd_gen_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (EacoSimError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
