from __future__ import annotations

from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

REGISTRY = CollectorRegistry()

SOLVER_STEPS = Counter(
    "fairx_solver_steps_total",
    "Solver steps by kind",
    ["kind"],
    registry=REGISTRY,
)
UTILITY_BATCHES = Counter(
    "fairx_utility_batch_evaluations_total",
    "Vectorized utility evaluations issued by share oracles",
    ["family"],
    registry=REGISTRY,
)
SHARE_CACHE_HITS = Counter(
    "fairx_share_cache_hits_total",
    "Column share lookups served from the per-step memo",
    registry=REGISTRY,
)
BINARY_SEARCH_PROBES = Counter(
    "fairx_binary_search_probes_total",
    "Surplus evaluations spent locating reduced flows",
    registry=REGISTRY,
)
COALITIONS_CHECKED = Counter(
    "fairx_coalitions_checked_total",
    "Coalitions examined by the brute-force core check",
    registry=REGISTRY,
)
PHASE_INNER_ITERATIONS = Histogram(
    "fairx_decrease_phase_inner_iterations",
    "Inner iterations per flow-decrease phase",
    buckets=(1, 2, 4, 8, 16, 32, 64, 128, 256),
    registry=REGISTRY,
)


def write_metrics(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(path), REGISTRY)
