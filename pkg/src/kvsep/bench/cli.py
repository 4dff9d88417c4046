"""Benchmark CLI: drive the engine through configured workload phases.

Example:

    kvsep-bench --dir /tmp/db --phase load update \\
        --bytes 200MiB --value-dist mixed --key-dist zipf:0.99 \\
        --keys 30000 --seed 7 --report /tmp/report

``load``/``update`` consume ``--bytes`` (or ``--ops`` when given);
``read``/``scan``/``mixed[:R]`` consume ``--ops``. ``--space-quota``
accepts a byte size or ``1.5x`` (times the live logical data at phase
start). The four ``--disable-*`` flags switch off one optimization each
to form baseline configurations.
"""

from __future__ import annotations

import argparse
import sys

from ..config import EngineConfig, parse_size
from ..engine import Engine
from .runner import RunReport, emit_report, run_phase
from .workload import KeyDist, ValueDist, WorkloadSpec

PRESETS = {
    "a": ("mixed:0.5", False),
    "b": ("mixed:0.95", False),
    "c": ("read", False),
    "d": ("mixed:0.95", False),  # latest-read approximated by a read-heavy mix
    "e": ("scan", False),
    "f": ("mixed:0.5", True),  # read-modify-write
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="kvsep-bench", description="Workload harness for the kvsep engine."
    )
    p.add_argument("--dir", required=True, help="database directory")
    p.add_argument("--phase", nargs="+", default=["load"],
                   help="phases to run in order: load update read scan mixed[:read_ratio]")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="YCSB-style mix preset (replaces --phase)")
    p.add_argument("--ops", type=parse_size, default=0, help="op budget per phase")
    p.add_argument("--bytes", type=parse_size, default=0,
                   help="logical byte budget for load/update phases")
    p.add_argument("--value-dist", default="pareto:1024",
                   help="fixed:N | mixed[:LO,HI,LARGE,FRAC] | pareto[:MEAN]")
    p.add_argument("--key-dist", default="zipf:0.99", help="uniform | zipf[:THETA]")
    p.add_argument("--keys", type=parse_size, default=100_000, help="key space size")
    p.add_argument("--threads", type=int, default=16, help="client threads")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--space-quota", default=None,
                   help="byte size, or Nx = N times live data at phase start")
    p.add_argument("--gc-threshold", type=float, default=None)
    p.add_argument("--readahead", choices=["on", "off"], default="off",
                   help="readahead for GC value reads")
    p.add_argument("--disable-compensation", action="store_true",
                   help="schedule compaction on raw sizes")
    p.add_argument("--disable-lazy-read", action="store_true",
                   help="GC reads whole value files before validation")
    p.add_argument("--disable-dtable-split", action="store_true",
                   help="conventional mixed key-table blocks")
    p.add_argument("--disable-dropcache", action="store_true",
                   help="no hot/cold routing of separated values")
    p.add_argument("--report", default=None, help="directory for CSV reports")
    # Desk-scale engine sizing (defaults suit sub-GiB runs).
    p.add_argument("--memtable-size", type=parse_size, default=8 << 20)
    p.add_argument("--ksst-size", type=parse_size, default=4 << 20)
    p.add_argument("--vsst-size", type=parse_size, default=32 << 20)
    p.add_argument("--block-cache", type=parse_size, default=64 << 20)
    p.add_argument("--base-target", type=parse_size, default=4 << 20)
    p.add_argument("--workers", type=int, default=0,
                   help="background maintenance workers (0 = inline)")
    return p


def config_from_args(args) -> EngineConfig:
    cfg = EngineConfig(
        memtable_size=args.memtable_size,
        ksst_size=args.ksst_size,
        vsst_size=args.vsst_size,
        block_cache_size=args.block_cache,
        base_level_target=args.base_target,
        background_workers=args.workers,
        compensation_enabled=not args.disable_compensation,
        gc_lazy_read=not args.disable_lazy_read,
        dtable_split=not args.disable_dtable_split,
        dropcache_enabled=not args.disable_dropcache,
        gc_readahead=args.readahead == "on",
    )
    if args.gc_threshold is not None:
        cfg.gc_garbage_threshold = args.gc_threshold
        cfg.gc_aggressive_threshold = min(cfg.gc_aggressive_threshold, args.gc_threshold)
    return cfg.validate()


def parse_phase_token(token: str) -> tuple[str, float]:
    name, _, arg = token.partition(":")
    if name == "mixed":
        return name, float(arg) if arg else 0.5
    if arg:
        raise ValueError(f"phase {name!r} takes no argument")
    return name, 0.5


def resolve_quota(text: str | None, engine: Engine) -> int:
    if text is None:
        return 0
    text = text.strip().lower()
    if text in ("0", "none", "unlimited"):
        return 0
    if text.endswith("x"):
        factor = float(text[:-1])
        live = engine.space_stats().valid_bytes or engine.vset.disk_usage()
        return int(factor * live)
    return parse_size(text)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    engine = Engine.open(args.dir, cfg)
    report = RunReport()
    phases = args.phase
    rmw = False
    if args.preset:
        token, rmw = PRESETS[args.preset]
        phases = [token]
    try:
        for token in phases:
            name, ratio = parse_phase_token(token)
            spec = WorkloadSpec(
                phase=name,
                key_space_size=args.keys,
                op_count=args.ops if (name not in ("load", "update") or args.ops) else 0,
                byte_target=args.bytes if name in ("load", "update") else 0,
                key_dist=KeyDist.parse(args.key_dist),
                value_dist=ValueDist.parse(args.value_dist),
                read_ratio=ratio,
                rmw=rmw,
                seed=args.seed,
            )
            if name != "load" and args.space_quota is not None and engine.throttle.unlimited:
                engine.throttle.quota = resolve_quota(args.space_quota, engine)
            result = run_phase(engine, spec, threads=args.threads)
            report.phases.append(result)
            print(
                f"{name}: {result.ops} ops in {result.elapsed_s:.2f}s "
                f"({result.ops_per_sec:.0f} ops/s, {result.logical_bytes >> 20} MiB logical, "
                f"{result.gc_jobs} GC jobs, {result.stall_events} stalls)"
            )
        engine.drain_maintenance()
        report.space_series = list(engine.space_series)
        report.gc_jobs = list(engine.gc_jobs)
        stats = engine.space_stats()
        if stats.k_l > 0 and stats.valid_bytes > 0:
            from ..space import index_space_amp, value_space_amp

            print(
                f"space: S_index={index_space_amp(stats):.3f} "
                f"S_value={value_space_amp(stats):.3f} "
                f"exposed/valid={stats.exposed_garbage / stats.valid_bytes:.3f} "
                f"disk={stats.disk_bytes >> 20} MiB"
            )
        if args.report:
            emit_report(report, args.report)
            print(f"report written to {args.report}")
    finally:
        engine.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
