from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from core.models import ExchangeMatrix, Instance, ShareRule
from core.utilities import UtilityFunction
from shared import telemetry
from shared.constants import (
    DEFAULT_SHAPLEY_CAP,
    SAMPLED_PERMUTATION_BLOCK,
    SHARE_CACHE_MAX_ENTRIES,
)
from shared.enums import ShareRuleKind
from shared.errors import InvariantViolation, OracleCapExceeded

logger = logging.getLogger("fairx.shares")


def _as_bundle(bundle: Any) -> np.ndarray:
    return np.ascontiguousarray(bundle, dtype=float)


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise OracleCapExceeded(
            f"exact Shapley over {n} agents exceeds the cap of {cap}; use the sampled oracle"
        )


def _coalition_weights(players: int) -> np.ndarray:
    # weight of a coalition of size s that excludes the scored player
    return np.array([1.0 / (players * math.comb(players - 1, s)) for s in range(players)])


def shapley_exact(
    utility: UtilityFunction,
    bundle: Any,
    i: int,
    cap: int = DEFAULT_SHAPLEY_CAP,
) -> float:
    """Reference enumeration for one donor; walks coalitions in Gray-code order."""
    b = _as_bundle(bundle)
    n = b.shape[0]
    _check_cap(n, cap)
    if b[i] == 0.0:
        return 0.0

    others = [k for k in range(n) if k != i]
    weights = _coalition_weights(n)
    without = np.zeros(n, dtype=float)
    with_i = np.zeros(n, dtype=float)
    with_i[i] = b[i]
    member = [False] * len(others)
    size = 0
    total = weights[0] * (utility.evaluate(with_i) - utility.evaluate(without))
    for step in range(1, 1 << len(others)):
        bit = (step & -step).bit_length() - 1
        k = others[bit]
        member[bit] = not member[bit]
        size += 1 if member[bit] else -1
        value = b[k] if member[bit] else 0.0
        without[k] = value
        with_i[k] = value
        total += weights[size] * (utility.evaluate(with_i) - utility.evaluate(without))
    return float(total)


def shapley_column(utility: UtilityFunction, bundle: Any, cap: int = DEFAULT_SHAPLEY_CAP) -> np.ndarray:
    """All donors' exact shares from one table of coalition values over the donor support.

    Donors with zero flow are null players and are left out of the enumeration.
    """
    b = _as_bundle(bundle)
    n = b.shape[0]
    _check_cap(n, cap)
    shares = np.zeros(n, dtype=float)
    support = np.flatnonzero(b > 0.0)
    k = int(support.size)
    if k == 0:
        return shares

    masks = np.arange(1 << k)
    membership = ((masks[:, None] >> np.arange(k)) & 1).astype(bool)
    bundles = np.zeros((masks.size, n), dtype=float)
    bundles[:, support] = membership * b[support]
    values = utility.evaluate_batch(bundles)
    sizes = membership.sum(axis=1)
    weights = _coalition_weights(k)
    for t in range(k):
        bit = 1 << t
        without = masks[(masks & bit) == 0]
        shares[support[t]] = float(np.dot(weights[sizes[without]], values[without | bit] - values[without]))
    return shares


def shapley_sampled_column(
    utility: UtilityFunction,
    bundle: Any,
    samples: int,
    seed: int | list[int],
) -> np.ndarray:
    """Permutation estimate; every sampled order scores all donors at once."""
    b = _as_bundle(bundle)
    n = b.shape[0]
    rng = np.random.default_rng(seed)
    totals = np.zeros(n, dtype=float)
    remaining = samples
    while remaining > 0:
        block = min(remaining, SAMPLED_PERMUTATION_BLOCK)
        orders = rng.permuted(np.tile(np.arange(n), (block, 1)), axis=1)
        ranks = np.argsort(orders, axis=1)
        prefixes = ranks[:, None, :] < np.arange(n + 1)[None, :, None]
        bundles = (prefixes * b).reshape(-1, n)
        values = utility.evaluate_batch(bundles).reshape(block, n + 1)
        before = np.take_along_axis(values, ranks, axis=1)
        after = np.take_along_axis(values, ranks + 1, axis=1)
        totals += (after - before).sum(axis=0)
        remaining -= block
    shares = totals / samples
    shares[b == 0.0] = 0.0
    return shares


def shapley_sampled(
    utility: UtilityFunction,
    bundle: Any,
    i: int,
    samples: int,
    seed: int | list[int],
) -> float:
    return float(shapley_sampled_column(utility, bundle, samples, seed)[i])


def proportional_column(utility: UtilityFunction, bundle: Any, weights: Any) -> np.ndarray:
    b = _as_bundle(bundle)
    weighted = np.asarray(weights, dtype=float) * b
    total = float(weighted.sum())
    value = utility.evaluate(b)
    if total == 0.0:
        if value > 0.0:
            raise InvariantViolation("positive utility with an empty weighted donor support")
        return np.zeros_like(b)
    return value * weighted / total


def proportional_share(utility: UtilityFunction, bundle: Any, i: int, weights: Any) -> float:
    return float(proportional_column(utility, bundle, weights)[i])


@dataclass(frozen=True, slots=True)
class Perturbation:
    eps: float
    n: int

    @property
    def rate(self) -> float:
        return self.eps / self.n


class ShareOracle:
    """Evaluates share columns under one rule, optionally with the eps/n perturbation.

    Columns are memoized by (utility, receiver, column bytes) until clear_cache().
    """

    def __init__(
        self,
        rule: ShareRule,
        perturbation: Perturbation | None = None,
        cap: int = DEFAULT_SHAPLEY_CAP,
        workers: int = 1,
    ) -> None:
        self.rule = rule
        self.perturbation = perturbation
        self.cap = cap
        self.workers = workers
        self._cache: dict[tuple[int, int, bytes], tuple[UtilityFunction, np.ndarray]] = {}

    @classmethod
    def for_instance(
        cls,
        inst: Instance,
        *,
        perturbed: bool = False,
        cap: int = DEFAULT_SHAPLEY_CAP,
        workers: int = 1,
    ) -> "ShareOracle":
        perturbation = Perturbation(eps=inst.epsilon, n=inst.n) if perturbed else None
        return cls(inst.share_rule, perturbation=perturbation, cap=cap, workers=workers)

    @property
    def perturbed(self) -> bool:
        return self.perturbation is not None

    def unperturbed(self) -> "ShareOracle":
        if self.perturbation is None:
            return self
        return ShareOracle(self.rule, perturbation=None, cap=self.cap, workers=self.workers)

    def clear_cache(self) -> None:
        self._cache.clear()

    def base_column(self, utility: UtilityFunction, bundle: Any, j: int) -> np.ndarray:
        b = _as_bundle(bundle)
        # entries hold the utility itself, so its id cannot be recycled while cached
        key = (id(utility), j, b.tobytes())
        cached = self._cache.get(key)
        if cached is not None and cached[0] is utility:
            telemetry.SHARE_CACHE_HITS.inc()
            return cached[1]

        telemetry.UTILITY_BATCHES.labels(family=str(getattr(utility, "family", "custom"))).inc()
        if self.rule.kind == ShareRuleKind.SHAPLEY_EXACT:
            shares = shapley_column(utility, b, cap=self.cap)
        elif self.rule.kind == ShareRuleKind.SHAPLEY_SAMPLED:
            shares = shapley_sampled_column(utility, b, self.rule.samples, [self.rule.seed, j])
        else:
            weights = self.rule.weight_matrix(b.shape[0])[:, j]
            shares = proportional_column(utility, b, weights)

        if len(self._cache) >= SHARE_CACHE_MAX_ENTRIES:
            self._cache.clear()
        shares.setflags(write=False)
        self._cache[key] = (utility, shares)
        return shares

    def column_shares(self, utility: UtilityFunction, bundle: Any, j: int) -> np.ndarray:
        b = _as_bundle(bundle)
        shares = self.base_column(utility, b, j)
        if self.perturbation is None:
            return shares.copy()
        return shares + self.perturbation.rate * b

    def share(self, utility: UtilityFunction, bundle: Any, i: int, j: int) -> float:
        return float(self.column_shares(utility, bundle, j)[i])

    def utility_value(self, utility: UtilityFunction, bundle: Any) -> float:
        b = _as_bundle(bundle)
        value = utility.evaluate(b)
        if self.perturbation is not None:
            value += self.perturbation.rate * float(b.sum())
        return value


def perturbed_share(
    oracle: ShareOracle,
    utility: UtilityFunction,
    x: ExchangeMatrix,
    i: int,
    j: int,
    eps: float,
    n: int,
) -> float:
    base = oracle.unperturbed().share(utility, x.bundle(j), i, j)
    return base + (eps / n) * float(x.values[i, j])
