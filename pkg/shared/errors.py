from __future__ import annotations


class FairxError(Exception):
    """Base class for every error raised by the solver stack."""


class InstanceError(FairxError, ValueError):
    pass


class PreconditionError(FairxError, ValueError):
    pass


class OracleCapExceeded(PreconditionError):
    pass


class InvariantViolation(FairxError, AssertionError):
    """Raised when a property the algorithm guarantees is observed to fail."""


class CrossMonotonicityViolation(InvariantViolation):
    pass


class TraceFormatError(FairxError, ValueError):
    pass
