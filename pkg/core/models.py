from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.utilities import NonNegative, UtilitySpec
from shared.constants import DEFAULT_SAMPLES
from shared.enums import Ordering, ShareRuleKind, StepKind


class ShareRule(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: ShareRuleKind = ShareRuleKind.SHAPLEY_EXACT
    samples: int = Field(default=DEFAULT_SAMPLES, ge=1)
    seed: int = 0
    # weights[i][j] credits donor i inside receiver j's utility; None means all ones
    weights: tuple[tuple[NonNegative, ...], ...] | None = None

    @property
    def cross_monotone(self) -> bool:
        return self.kind != ShareRuleKind.PROPORTIONAL

    def weight_matrix(self, n: int) -> np.ndarray:
        if self.weights is None:
            return np.ones((n, n), dtype=float)
        return np.asarray(self.weights, dtype=float)


class Instance(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(ge=2)
    utilities: tuple[UtilitySpec, ...]
    share_rule: ShareRule = Field(default_factory=ShareRule)
    epsilon: float = Field(gt=0, lt=1)
    lipschitz: float = Field(ge=1, allow_inf_nan=False)

    @model_validator(mode="after")
    def validate_shape(self) -> "Instance":
        if len(self.utilities) != self.n:
            raise ValueError(f"expected {self.n} utilities, got {len(self.utilities)}")
        for index, spec in enumerate(self.utilities):
            if spec.dimension != self.n:
                raise ValueError(
                    f"utility {index} covers {spec.dimension} donors but the instance has {self.n} agents"
                )
        weights = self.share_rule.weights
        if weights is not None and (len(weights) != self.n or any(len(row) != self.n for row in weights)):
            raise ValueError(f"share_rule.weights must be a {self.n}x{self.n} matrix")
        bound = self.analytic_lipschitz_bound()
        if bound > self.lipschitz:
            raise ValueError(
                f"declared L below analytic bound: lipschitz={self.lipschitz!r} < {bound!r}"
            )
        return self

    def analytic_lipschitz_bound(self) -> float:
        return max(spec.lipschitz() for spec in self.utilities)

    def full_sharing_utilities(self) -> list[float]:
        output: list[float] = []
        for receiver, spec in enumerate(self.utilities):
            bundle = np.ones(self.n, dtype=float)
            bundle[receiver] = 0.0
            output.append(spec.evaluate(bundle))
        return output


@dataclass(frozen=True, slots=True, eq=False)
class ExchangeMatrix:
    """x[i, j] is the fraction of agent i's data given to agent j; the diagonal stays 0."""

    values: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.values, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"exchange matrix must be square, got shape {matrix.shape}")
        if matrix.shape[0] < 2:
            raise ValueError("exchange matrix needs at least two agents")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("exchange matrix entries must be finite")
        if np.any(matrix < 0.0) or np.any(matrix > 1.0):
            bad = np.argwhere((matrix < 0.0) | (matrix > 1.0))[0]
            raise ValueError(
                f"exchange entry ({bad[0]}, {bad[1]}) = {matrix[bad[0], bad[1]]!r} outside [0, 1]"
            )
        if np.any(np.diag(matrix) != 0.0):
            raise ValueError("exchange matrix diagonal must be 0")
        matrix.setflags(write=False)
        object.__setattr__(self, "values", matrix)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @classmethod
    def zeros(cls, n: int) -> "ExchangeMatrix":
        return cls(np.zeros((n, n), dtype=float))

    @classmethod
    def full(cls, n: int) -> "ExchangeMatrix":
        matrix = np.ones((n, n), dtype=float)
        np.fill_diagonal(matrix, 0.0)
        return cls(matrix)

    @classmethod
    def from_rows(cls, rows: list[list[float]]) -> "ExchangeMatrix":
        return cls(np.asarray(rows, dtype=float))

    def bundle(self, j: int) -> np.ndarray:
        if not 0 <= j < self.n:
            raise IndexError(f"agent index {j} out of range for n={self.n}")
        return self.values[:, j].copy()

    def with_entry(self, i: int, j: int, value: float) -> "ExchangeMatrix":
        matrix = self.values.copy()
        matrix[i, j] = value
        return ExchangeMatrix(matrix)

    def to_rows(self) -> list[list[float]]:
        return [[float(entry) for entry in row] for row in self.values]


def descending_order(delta: np.ndarray) -> tuple[int, ...]:
    # highest surplus first, lowest index first among ties
    order = np.lexsort((np.arange(delta.shape[0]), -delta))
    return tuple(int(k) for k in order)


@dataclass(frozen=True, slots=True, eq=False)
class SurplusProfile:
    delta: np.ndarray
    shares: np.ndarray
    utilities: np.ndarray
    sorted_view: tuple[int, ...] = field(default=())

    @classmethod
    def from_columns(cls, shares: np.ndarray, utilities: np.ndarray) -> "SurplusProfile":
        delta = shares.sum(axis=1) - utilities
        for array in (shares, utilities, delta):
            array.setflags(write=False)
        return cls(delta=delta, shares=shares, utilities=utilities, sorted_view=descending_order(delta))

    @property
    def n(self) -> int:
        return int(self.delta.shape[0])

    @property
    def sorted_values(self) -> np.ndarray:
        return self.delta[list(self.sorted_view)]

    @property
    def max_surplus(self) -> float:
        return float(self.delta[self.sorted_view[0]])

    @property
    def min_surplus(self) -> float:
        return float(self.delta[self.sorted_view[-1]])

    @property
    def zero_sum_residual(self) -> float:
        return abs(float(self.delta.sum()))

    def to_list(self) -> list[float]:
        return [float(value) for value in self.delta]


class SolverConstants(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int
    epsilon: float
    lipschitz: float
    stop_threshold: float
    selection_gap: float
    floor_offset: float
    phase_gap: float
    alpha: float
    increase_step: float
    tol_bs: float
    progress_slack: float
    phase_iteration_bound: float
    max_outer_iters: int
    exact: dict[str, str]


def derive_constants(
    epsilon: float,
    n: int,
    lipschitz: float,
    tol_bs: float | None = None,
    max_outer_iters: int | None = None,
) -> SolverConstants:
    """Every threshold the solver compares against, derived once in exact arithmetic."""
    eps = Fraction(epsilon)
    big_l = Fraction(lipschitz)
    values: dict[str, Fraction] = {
        "stop_threshold": eps / n,
        "selection_gap": eps / n**2,
        "floor_offset": eps / (2 * n**3),
        "phase_gap": eps / (4 * n**3),
        "alpha": eps / (n * big_l),
        "increase_step": eps / (n**3 * big_l),
        "tol_bs": Fraction(tol_bs) if tol_bs is not None else eps / (64 * n**4 * big_l),
        "phase_iteration_bound": 4 * n**4 * big_l / eps + n,
    }
    values["progress_slack"] = n * big_l * values["tol_bs"]
    default_iters = 10 * n**5 * math.ceil(big_l / eps)
    return SolverConstants(
        n=n,
        epsilon=epsilon,
        lipschitz=lipschitz,
        max_outer_iters=max_outer_iters if max_outer_iters is not None else default_iters,
        exact={name: str(value) for name, value in values.items()},
        **{name: float(value) for name, value in values.items()},
    )


class StepRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    index: int = Field(ge=0)
    outer_iteration: int = Field(ge=0)
    kind: StepKind
    agent_set: list[int] = Field(default_factory=list)
    receiver: int | None = None
    touched: list[tuple[int, int]] = Field(default_factory=list)
    entries_before: list[float] = Field(default_factory=list)
    entries_after: list[float] = Field(default_factory=list)
    surplus_before: list[float]
    surplus_after: list[float]
    floors: list[float] = Field(default_factory=list)
    inner_iterations: int = Field(default=0, ge=0)
    h1: float | None = None
    h2: float | None = None
    progress: Ordering | None = None
    acyclicity_attested: bool = True

    @model_validator(mode="after")
    def validate_touched(self) -> "StepRecord":
        if not (len(self.touched) == len(self.entries_before) == len(self.entries_after)):
            raise ValueError("touched, entries_before and entries_after must have equal length")
        if len(self.surplus_before) != len(self.surplus_after):
            raise ValueError("surplus snapshots must have equal length")
        return self


class SolverTrace(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int = Field(ge=2)
    constants: SolverConstants
    initial_exchange: list[list[float]]
    initial_surplus: list[float]
    steps: list[StepRecord] = Field(default_factory=list)

    def outer_iterations(self) -> int:
        return sum(1 for step in self.steps if step.kind != StepKind.SELECT_S)

    def header(self) -> dict[str, Any]:
        return self.model_dump(mode="json", exclude={"steps"})
