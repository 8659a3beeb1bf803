from __future__ import annotations

import logging

import numpy as np

from core.models import ExchangeMatrix, Instance, SurplusProfile
from core.parallel import ordered_map
from core.shares import ShareOracle
from shared.constants import RECOMPUTE_TOLERANCE
from shared.errors import InvariantViolation

logger = logging.getLogger("fairx.surplus")


def bundle(x: ExchangeMatrix, j: int) -> np.ndarray:
    return x.bundle(j)


def _column(inst: Instance, x: ExchangeMatrix, oracle: ShareOracle, j: int) -> tuple[np.ndarray, float]:
    spec = inst.utilities[j]
    received = x.bundle(j)
    return oracle.column_shares(spec, received, j), oracle.utility_value(spec, received)


def compute_surplus(inst: Instance, x: ExchangeMatrix, oracle: ShareOracle) -> SurplusProfile:
    columns = ordered_map(lambda j: _column(inst, x, oracle, j), range(inst.n), workers=oracle.workers)
    shares = np.zeros((inst.n, inst.n), dtype=float)
    utilities = np.zeros(inst.n, dtype=float)
    for j, (column, value) in enumerate(columns):
        shares[:, j] = column
        utilities[j] = value
    return SurplusProfile.from_columns(shares, utilities)


def recompute_surplus_after_column_change(
    profile: SurplusProfile,
    inst: Instance,
    x: ExchangeMatrix,
    oracle: ShareOracle,
    j: int,
    debug: bool = False,
) -> SurplusProfile:
    """Refresh only psi_{.j} and u_j; valid when x changed in column j alone."""
    shares = profile.shares.copy()
    utilities = profile.utilities.copy()
    column, value = _column(inst, x, oracle, j)
    shares[:, j] = column
    utilities[j] = value
    updated = SurplusProfile.from_columns(shares, utilities)
    if debug:
        full = compute_surplus(inst, x, oracle)
        divergence = float(np.max(np.abs(full.delta - updated.delta)))
        if divergence > RECOMPUTE_TOLERANCE:
            raise InvariantViolation(
                f"incremental surplus for column {j} diverges from full recompute by {divergence:.3e}; "
                "the exchange changed outside that column"
            )
    return updated
