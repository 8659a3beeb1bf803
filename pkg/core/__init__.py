"""Pure computation engine: utilities, share oracles, exchange graph, solver and verifier."""

from core.models import ExchangeMatrix, Instance, ShareRule, SolverTrace, SurplusProfile
from core.solver import SolverConfig, SolverResult, run_local_search
from core.verify import VerificationReport, build_report

__all__ = [
    "ExchangeMatrix",
    "Instance",
    "ShareRule",
    "SolverTrace",
    "SurplusProfile",
    "SolverConfig",
    "SolverResult",
    "run_local_search",
    "VerificationReport",
    "build_report",
]
