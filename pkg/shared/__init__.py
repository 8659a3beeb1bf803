"""Constants, enums, errors, serialization and telemetry shared by engine and CLI."""

from shared.enums import Ordering, ShareRuleKind, SolverStatus, StepKind, UtilityFamily
from shared.errors import (
    CrossMonotonicityViolation,
    FairxError,
    InstanceError,
    InvariantViolation,
    OracleCapExceeded,
    PreconditionError,
    TraceFormatError,
)

__all__ = [
    "UtilityFamily",
    "ShareRuleKind",
    "StepKind",
    "SolverStatus",
    "Ordering",
    "FairxError",
    "InstanceError",
    "PreconditionError",
    "OracleCapExceeded",
    "InvariantViolation",
    "CrossMonotonicityViolation",
    "TraceFormatError",
]
