"""Phase execution and CSV reporting for the benchmark harness.

Operation streams are pre-generated and cut to their byte budget before
execution, so the executed op set is a pure function of the seed; client
threads take a round-robin slice each. Reports are CSV files with fixed
column orders: per-phase results, the space time series, per-job GC
stats, and the GC latency breakdown.
"""

from __future__ import annotations

import csv
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import WriteStalled
from ..gc import gc_latency_report
from .workload import (
    KEY_SIZE,
    OP_PUT,
    OP_READ,
    OP_RMW,
    OP_SCAN,
    OpStream,
    WorkloadSpec,
    encode_key,
    generate_stream,
    value_payload,
)

PHASE_FIELDS = (
    "phase", "ops", "logical_bytes", "elapsed_s", "ops_per_sec",
    "found", "missing", "stall_events",
    "foreground_read_bytes", "foreground_write_bytes",
    "flush_write_bytes", "compaction_read_bytes", "compaction_write_bytes",
    "gc_read_bytes", "gc_write_bytes", "gc_jobs",
)

BREAKDOWN_FIELDS = (
    "phase", "jobs", "read_pct", "gc_lookup_pct", "write_pct",
    "avg_read_us", "avg_gc_lookup_us", "avg_write_us",
)


@dataclass
class PhaseResult:
    phase: str
    ops: int = 0
    logical_bytes: int = 0
    elapsed_s: float = 0.0
    found: int = 0
    missing: int = 0
    stall_events: int = 0
    stats_delta: dict = field(default_factory=dict)
    gc_jobs: int = 0
    gc_breakdown: dict | None = None

    @property
    def ops_per_sec(self) -> float:
        return self.ops / self.elapsed_s if self.elapsed_s > 0 else 0.0

    def csv_row(self) -> list:
        d = self.stats_delta
        return [
            self.phase, self.ops, self.logical_bytes, f"{self.elapsed_s:.3f}",
            f"{self.ops_per_sec:.1f}", self.found, self.missing, self.stall_events,
            d.get("foreground.read_bytes", 0), d.get("foreground.write_bytes", 0),
            d.get("flush.write_bytes", 0), d.get("compaction.read_bytes", 0),
            d.get("compaction.write_bytes", 0), d.get("gc.read_bytes", 0),
            d.get("gc.write_bytes", 0), self.gc_jobs,
        ]


@dataclass
class RunReport:
    phases: list[PhaseResult] = field(default_factory=list)
    space_series: list = field(default_factory=list)
    gc_jobs: list = field(default_factory=list)


def _cut_stream(stream: OpStream, byte_target: int) -> OpStream:
    """Trim the stream at the op where cumulative logical write bytes
    reach the target; thread count then cannot change the op set."""
    if byte_target <= 0:
        return stream
    write_bytes = np.where(
        (stream.ops == OP_PUT) | (stream.ops == OP_RMW), stream.sizes + KEY_SIZE, 0
    )
    cum = np.cumsum(write_bytes)
    idx = int(np.searchsorted(cum, byte_target)) + 1
    if idx >= len(stream.ops):
        return stream
    return OpStream(stream.ops[:idx], stream.ranks[:idx], stream.sizes[:idx])


class _ClientWorker:
    def __init__(self, engine, stream: OpStream, indices: np.ndarray):
        self.engine = engine
        self.stream = stream
        self.indices = indices
        self.ops = 0
        self.logical_bytes = 0
        self.found = 0
        self.missing = 0
        self.stalls = 0
        self.error: BaseException | None = None

    def run(self) -> None:
        engine = self.engine
        ops = self.stream.ops
        ranks = self.stream.ranks
        sizes = self.stream.sizes
        try:
            for i in self.indices:
                op = ops[i]
                rank = int(ranks[i])
                key = encode_key(rank)
                if op == OP_PUT or op == OP_RMW:
                    if op == OP_RMW:
                        if engine.get(key) is not None:
                            self.found += 1
                        else:
                            self.missing += 1
                    size = int(sizes[i])
                    try:
                        engine.put(key, value_payload(rank, size))
                        self.logical_bytes += size + KEY_SIZE
                    except WriteStalled:
                        self.stalls += 1
                elif op == OP_READ:
                    if engine.get(key) is not None:
                        self.found += 1
                    else:
                        self.missing += 1
                else:  # OP_SCAN
                    got = engine.scan(key, int(sizes[i]))
                    self.found += len(got)
                self.ops += 1
        except BaseException as exc:
            self.error = exc


def run_phase(engine, spec: WorkloadSpec, threads: int = 1) -> PhaseResult:
    stream = generate_stream(spec)
    if spec.byte_target:
        stream = _cut_stream(stream, spec.byte_target)
    before = engine.stats.snapshot()
    jobs_before = len(engine.gc_jobs)
    stalls_before = engine.throttle.stall_events

    result = PhaseResult(phase=spec.phase)
    n = len(stream.ops)
    t0 = time.perf_counter()
    workers = [
        _ClientWorker(engine, stream, np.arange(c, n, threads)) for c in range(threads)
    ]
    if threads == 1:
        workers[0].run()
    else:
        ts = [threading.Thread(target=w.run, name=f"bench-client-{i}") for i, w in enumerate(workers)]
        for t in ts:
            t.start()
        for t in ts:
            t.join()
    result.elapsed_s = time.perf_counter() - t0
    for w in workers:
        if w.error is not None:
            raise w.error
        result.ops += w.ops
        result.logical_bytes += w.logical_bytes
        result.found += w.found
        result.missing += w.missing
    result.stall_events = engine.throttle.stall_events - stalls_before
    result.stats_delta = engine.stats.delta_since(before)
    new_jobs = engine.gc_jobs[jobs_before:]
    result.gc_jobs = len(new_jobs)
    if new_jobs:
        result.gc_breakdown = gc_latency_report(new_jobs)
    return result


def emit_report(report: RunReport, outdir: str) -> None:
    os.makedirs(outdir, exist_ok=True)

    with open(os.path.join(outdir, "phases.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(PHASE_FIELDS)
        for phase in report.phases:
            w.writerow(phase.csv_row())

    with open(os.path.join(outdir, "space.csv"), "w", newline="") as f:
        w = csv.writer(f)
        from ..space import SpaceStats

        w.writerow(SpaceStats.CSV_FIELDS)
        for ts, stats in report.space_series:
            w.writerow(stats.csv_row(ts))

    with open(os.path.join(outdir, "gc_jobs.csv"), "w", newline="") as f:
        w = csv.writer(f)
        from ..gc import GcJobStats

        w.writerow(GcJobStats.CSV_FIELDS)
        for job in report.gc_jobs:
            w.writerow(job.csv_row())

    with open(os.path.join(outdir, "gc_breakdown.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(BREAKDOWN_FIELDS)
        for phase in report.phases:
            b = phase.gc_breakdown
            if b is None:
                continue
            w.writerow(
                [
                    phase.phase, b["jobs"],
                    f"{100 * b['read_share']:.2f}",
                    f"{100 * b['gc_lookup_share']:.2f}",
                    f"{100 * b['write_share']:.2f}",
                    f"{b['avg_read_us']:.1f}",
                    f"{b['avg_gc_lookup_us']:.1f}",
                    f"{b['avg_write_us']:.1f}",
                ]
            )
