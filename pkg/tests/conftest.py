from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np
import pytest

from core.models import Instance, ShareRule
from core.shares import Perturbation, ShareOracle
from core.utilities import AdditiveUtility
from shared.enums import ShareRuleKind


class SqrtOfSum:
    """u(b) = sqrt(sum b); not a shipped family, only scored by the oracles directly."""

    family = "sqrt"

    def evaluate(self, bundle: np.ndarray) -> float:
        return math.sqrt(float(np.sum(bundle)))

    def evaluate_batch(self, bundles: np.ndarray) -> np.ndarray:
        return np.sqrt(np.asarray(bundles, dtype=float).sum(axis=1))


def two_agent(epsilon: float = 0.1, kind: ShareRuleKind = ShareRuleKind.SHAPLEY_EXACT) -> Instance:
    # agent 0 values agent 1's data at 1, agent 1 values agent 0's data at 2
    return Instance(
        n=2,
        utilities=(AdditiveUtility(weights=(0.0, 1.0)), AdditiveUtility(weights=(2.0, 0.0))),
        share_rule=ShareRule(kind=kind),
        epsilon=epsilon,
        lipschitz=2.0,
    )


def symmetric(n: int = 3, epsilon: float = 0.1) -> Instance:
    utilities = []
    for receiver in range(n):
        weights = [1.0] * n
        weights[receiver] = 0.0
        utilities.append(AdditiveUtility(weights=tuple(weights)))
    return Instance(n=n, utilities=tuple(utilities), epsilon=epsilon, lipschitz=1.0)


@pytest.fixture(autouse=True)
def restore_root_logging():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture()
def sqrt_utility() -> SqrtOfSum:
    return SqrtOfSum()


@pytest.fixture()
def two_agent_instance() -> Instance:
    return two_agent()


@pytest.fixture()
def exact_oracle(two_agent_instance: Instance) -> ShareOracle:
    return ShareOracle.for_instance(two_agent_instance)


@pytest.fixture()
def perturbed_oracle(two_agent_instance: Instance) -> ShareOracle:
    return ShareOracle(
        two_agent_instance.share_rule,
        perturbation=Perturbation(eps=two_agent_instance.epsilon, n=two_agent_instance.n),
    )


def two_agent_payload(epsilon: float = 0.1) -> dict[str, object]:
    return {
        "schema_version": 1,
        "n": 2,
        "epsilon": epsilon,
        "share_rule": {"kind": "shapley_exact"},
        "utilities": [
            {"family": "additive", "weights": [0.0, 1.0]},
            {"family": "additive", "weights": [2.0, 0.0]},
        ],
    }


@pytest.fixture()
def two_agent_file(tmp_path: Path) -> Path:
    path = tmp_path / "two_agent.json"
    path.write_text(json.dumps(two_agent_payload(), indent=2), encoding="utf-8")
    return path


@pytest.fixture()
def make_two_agent():
    return two_agent


@pytest.fixture()
def make_symmetric():
    return symmetric
