from .runner import PhaseResult, RunReport, emit_report, run_phase
from .workload import KeyDist, ValueDist, WorkloadSpec, generate_stream

__all__ = [
    "PhaseResult",
    "RunReport",
    "run_phase",
    "emit_report",
    "WorkloadSpec",
    "KeyDist",
    "ValueDist",
    "generate_stream",
]
