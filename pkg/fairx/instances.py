from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from core.models import Instance, ShareRule
from core.utilities import AdditiveUtility, ConcaveOfSumUtility, CoverageUtility, UtilitySpec
from shared.constants import INSTANCE_SCHEMA_VERSION
from shared.enums import UtilityFamily
from shared.errors import InstanceError
from shared.serialization import pretty_json_text


class InstanceFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = INSTANCE_SCHEMA_VERSION
    n: int = Field(ge=2)
    epsilon: float = Field(gt=0, lt=1)
    lipschitz: float | None = Field(default=None, ge=1)
    share_rule: ShareRule = Field(default_factory=ShareRule)
    utilities: list[UtilitySpec]
    seed: int | None = None

    def with_overrides(self, **updates: Any) -> "InstanceFile":
        changes = {key: value for key, value in updates.items() if value is not None}
        if not changes:
            return self
        return InstanceFile.model_validate({**self.model_dump(), "share_rule": self.share_rule, **changes})

    def resolved_lipschitz(self) -> float:
        if self.lipschitz is not None:
            return self.lipschitz
        return max(1.0, max(spec.lipschitz() for spec in self.utilities))

    def resolved_share_rule(self) -> ShareRule:
        # the file-level seed drives sampled shares unless the rule pins its own
        if self.seed is None or "seed" in self.share_rule.model_fields_set:
            return self.share_rule
        return self.share_rule.model_copy(update={"seed": self.seed})

    def to_instance(self) -> Instance:
        return Instance(
            n=self.n,
            utilities=tuple(self.utilities),
            share_rule=self.resolved_share_rule(),
            epsilon=self.epsilon,
            lipschitz=self.resolved_lipschitz(),
        )


def format_validation_error(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        parts.append(f"field {location}: {error['msg']}")
    return "; ".join(parts)


def load_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InstanceError(f"{path}: cannot read file: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_instance_file(path: Path) -> InstanceFile:
    try:
        return InstanceFile.model_validate(load_json(path))
    except ValidationError as exc:
        raise InstanceError(f"{path}: {format_validation_error(exc)}") from exc


def build_instance(source: InstanceFile, label: str = "<instance>") -> Instance:
    try:
        return source.to_instance()
    except ValidationError as exc:
        raise InstanceError(f"{label}: {format_validation_error(exc)}") from exc


def parse_instance(path: Path) -> Instance:
    return build_instance(load_instance_file(path), str(path))


def _weights(rng: np.random.Generator, n: int, receiver: int) -> tuple[float, ...]:
    weights = rng.uniform(0.5, 2.0, size=n)
    # agents own their data already, so self-weight is zero
    weights[receiver] = 0.0
    return tuple(float(w) for w in weights)


def generate_instance(n: int, family: UtilityFamily | str, eps: float, seed: int) -> InstanceFile:
    if n < 2:
        raise InstanceError(f"generated instances need at least two agents, got n={n}")
    kind = UtilityFamily(family)
    rng = np.random.default_rng(seed)
    utilities: list[AdditiveUtility | ConcaveOfSumUtility | CoverageUtility] = []
    for receiver in range(n):
        if kind == UtilityFamily.ADDITIVE:
            utilities.append(AdditiveUtility(weights=_weights(rng, n, receiver)))
        elif kind == UtilityFamily.CONCAVE_OF_SUM:
            utilities.append(ConcaveOfSumUtility(weights=_weights(rng, n, receiver)))
        else:
            topics = 2 * n
            values = rng.uniform(0.0, 1.0, size=topics)
            hits = rng.uniform(0.0, 1.0, size=(n, topics))
            hits[receiver, :] = 0.0
            utilities.append(
                CoverageUtility(
                    topic_values=tuple(float(v) for v in values),
                    hit_probabilities=tuple(tuple(float(p) for p in row) for row in hits),
                )
            )
    lipschitz = max(1.0, max(spec.lipschitz() for spec in utilities))
    return InstanceFile(
        n=n, epsilon=eps, lipschitz=lipschitz, share_rule=ShareRule(seed=seed), utilities=utilities, seed=seed
    )


def write_instance_file(source: InstanceFile, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(instance_text(source), encoding="utf-8")


def instance_text(source: InstanceFile) -> str:
    return pretty_json_text(source.model_dump(mode="json"))
