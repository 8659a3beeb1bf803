"""Monotone, normalized, Lipschitz utility families and the non-satiation perturbation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Annotated, Any, Literal, Protocol, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator

from shared.errors import PreconditionError

NonNegative = Annotated[float, Field(ge=0, allow_inf_nan=False)]
Positive = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Probability = Annotated[float, Field(ge=0, le=1, allow_inf_nan=False)]


class UtilityFunction(Protocol):
    def evaluate(self, bundle: np.ndarray) -> float: ...

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray: ...


class _UtilityModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def lipschitz(self) -> float:
        raise NotImplementedError

    def evaluate(self, bundle: np.ndarray) -> float:
        return float(self.evaluate_batch(np.asarray(bundle, dtype=float)[None, :])[0])


class AdditiveUtility(_UtilityModel):
    family: Literal["additive"] = "additive"
    weights: tuple[NonNegative, ...] = Field(min_length=1)

    _w: np.ndarray = PrivateAttr()

    def model_post_init(self, __context: Any) -> None:
        self._w = np.asarray(self.weights, dtype=float)

    @property
    def dimension(self) -> int:
        return len(self.weights)

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray:
        return np.asarray(bundles @ self._w, dtype=float)

    def lipschitz(self) -> float:
        return float(self._w.max())


class ConcaveOfSumUtility(_UtilityModel):
    """c * (sqrt(w.b + s) - sqrt(s)); the smoothing s keeps the slope at zero finite."""

    family: Literal["concave_of_sum"] = "concave_of_sum"
    scale: Positive = 1.0
    weights: tuple[NonNegative, ...] = Field(min_length=1)
    smoothing: Positive = 0.25

    _w: np.ndarray = PrivateAttr()

    def model_post_init(self, __context: Any) -> None:
        self._w = np.asarray(self.weights, dtype=float)

    @property
    def dimension(self) -> int:
        return len(self.weights)

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray:
        inner = bundles @ self._w + self.smoothing
        return np.asarray(self.scale * (np.sqrt(inner) - math.sqrt(self.smoothing)), dtype=float)

    def lipschitz(self) -> float:
        return self.scale * float(self._w.max()) / (2.0 * math.sqrt(self.smoothing))


class CoverageUtility(_UtilityModel):
    """Expected value of topics covered; donor k hits topic t with probability p[k][t] * b_k."""

    family: Literal["coverage"] = "coverage"
    topic_values: tuple[NonNegative, ...] = Field(min_length=1)
    hit_probabilities: tuple[tuple[Probability, ...], ...] = Field(min_length=1)

    _v: np.ndarray = PrivateAttr()
    _p: np.ndarray = PrivateAttr()

    @field_validator("hit_probabilities")
    @classmethod
    def validate_rectangular(
        cls, value: tuple[tuple[float, ...], ...]
    ) -> tuple[tuple[float, ...], ...]:
        widths = {len(row) for row in value}
        if len(widths) != 1:
            raise ValueError("hit_probabilities rows must all have one entry per topic")
        return value

    @model_validator(mode="after")
    def validate_topics(self) -> "CoverageUtility":
        if len(self.hit_probabilities[0]) != len(self.topic_values):
            raise ValueError("hit_probabilities rows must match the number of topic_values")
        return self

    def model_post_init(self, __context: Any) -> None:
        self._v = np.asarray(self.topic_values, dtype=float)
        self._p = np.asarray(self.hit_probabilities, dtype=float)

    @property
    def dimension(self) -> int:
        return len(self.hit_probabilities)

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray:
        miss = np.prod(1.0 - bundles[:, :, None] * self._p[None, :, :], axis=1)
        return np.asarray((1.0 - miss) @ self._v, dtype=float)

    def lipschitz(self) -> float:
        return float((self._p @ self._v).max())


UtilitySpec = Annotated[
    Union[AdditiveUtility, ConcaveOfSumUtility, CoverageUtility],
    Field(discriminator="family"),
]

@dataclass(frozen=True, slots=True)
class PerturbedUtility:
    """u(b) + (eps/n) * sum(b): every extra unit of data is worth at least eps/n."""

    base: AdditiveUtility | ConcaveOfSumUtility | CoverageUtility
    eps: float
    n: int

    @property
    def family(self) -> str:
        return self.base.family

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray:
        return self.base.evaluate_batch(bundles) + (self.eps / self.n) * bundles.sum(axis=1)

    def evaluate(self, bundle: np.ndarray) -> float:
        return float(self.evaluate_batch(np.asarray(bundle, dtype=float)[None, :])[0])

    def lipschitz(self) -> float:
        return self.base.lipschitz() + self.eps / self.n


def _checked_bundle(bundle: Any, dimension: int) -> np.ndarray:
    values = np.asarray(bundle, dtype=float)
    if values.shape != (dimension,):
        raise PreconditionError(f"bundle must have {dimension} entries, got shape {values.shape}")
    if not np.all((values >= 0.0) & (values <= 1.0)):
        raise PreconditionError("bundle entries must lie in [0, 1]")
    return values


def eval_utility(spec: AdditiveUtility | ConcaveOfSumUtility | CoverageUtility, bundle: Any) -> float:
    return spec.evaluate(_checked_bundle(bundle, spec.dimension))


def eval_perturbed_utility(pu: PerturbedUtility, bundle: Any) -> float:
    return pu.evaluate(_checked_bundle(bundle, pu.dimension))


def analytic_lipschitz(
    spec: AdditiveUtility | ConcaveOfSumUtility | CoverageUtility | PerturbedUtility,
) -> float:
    return spec.lipschitz()
