from __future__ import annotations

import math

import numpy as np
import pytest

from core.models import ExchangeMatrix, Instance, ShareRule
from core.shares import (
    Perturbation,
    ShareOracle,
    perturbed_share,
    proportional_column,
    proportional_share,
    shapley_column,
    shapley_exact,
    shapley_sampled,
    shapley_sampled_column,
)
from core.utilities import AdditiveUtility
from fairx.instances import generate_instance
from shared import telemetry
from shared.enums import ShareRuleKind
from shared.errors import InvariantViolation, OracleCapExceeded

HALF_ROOT_TWO = math.sqrt(2.0) / 2.0


def _cache_hits() -> float:
    return telemetry.REGISTRY.get_sample_value("fairx_share_cache_hits_total") or 0.0


def test_exact_shapley_on_square_root_utility(sqrt_utility) -> None:
    assert abs(shapley_exact(sqrt_utility, [1.0, 1.0], 0) - HALF_ROOT_TWO) <= 1e-9
    assert abs(shapley_exact(sqrt_utility, [1.0, 1.0], 1) - HALF_ROOT_TWO) <= 1e-9
    column = shapley_column(sqrt_utility, [1.0, 1.0])
    assert np.max(np.abs(column - HALF_ROOT_TWO)) <= 1e-9


def test_exact_shapley_zero_flow_gets_nothing(sqrt_utility) -> None:
    assert shapley_exact(sqrt_utility, [0.0, 1.0, 0.4], 0) == 0.0
    assert shapley_column(sqrt_utility, [0.0, 1.0, 0.4])[0] == 0.0


def test_exact_shapley_collapses_for_additive_utility() -> None:
    u = AdditiveUtility(weights=(0.5, 0.0, 2.0, 1.0))
    b = np.array([0.3, 0.0, 0.8, 1.0])
    expected = np.array(u.weights) * b
    assert np.allclose(shapley_column(u, b), expected, atol=1e-12)
    for i in range(4):
        assert shapley_exact(u, b, i) == pytest.approx(expected[i], abs=1e-12)


def test_gray_code_reference_matches_column_table() -> None:
    inst = generate_instance(6, "coverage", 0.1, seed=4)
    u = inst.utilities[2]
    rng = np.random.default_rng(8)
    b = rng.uniform(size=6)
    b[2] = 0.0
    b[4] = 0.0
    column = shapley_column(u, b)
    for i in range(6):
        assert abs(shapley_exact(u, b, i) - column[i]) <= 1e-12


def test_exact_shapley_refuses_above_cap(sqrt_utility) -> None:
    with pytest.raises(OracleCapExceeded, match="sampled"):
        shapley_exact(sqrt_utility, np.ones(17), 0)
    with pytest.raises(OracleCapExceeded):
        shapley_column(sqrt_utility, np.ones(5), cap=4)


def test_sampled_shapley_concentrates_near_exact(sqrt_utility) -> None:
    hits = sum(
        abs(shapley_sampled(sqrt_utility, [1.0, 1.0], 0, 20000, seed) - HALF_ROOT_TWO) <= 0.02
        for seed in range(100)
    )
    assert hits >= 99


def test_sampled_shapley_mean_is_unbiased() -> None:
    inst = generate_instance(4, "coverage", 0.1, seed=6)
    u = inst.utilities[0]
    b = np.array([0.0, 0.9, 0.4, 0.7])
    exact = shapley_column(u, b)[1]
    estimates = np.array([shapley_sampled(u, b, 1, 200, seed) for seed in range(30)])
    spread = estimates.std(ddof=1) / math.sqrt(30)
    assert abs(estimates.mean() - exact) <= 3 * spread + 1e-12


def test_sampled_shapley_is_efficient_and_deterministic(sqrt_utility) -> None:
    b = np.array([0.2, 0.0, 0.7, 1.0])
    first = shapley_sampled_column(sqrt_utility, b, 300, [3, 1])
    second = shapley_sampled_column(sqrt_utility, b, 300, [3, 1])
    assert first.tolist() == second.tolist()
    assert first[1] == 0.0
    assert abs(first.sum() - sqrt_utility.evaluate(b)) <= 1e-9


def test_sampled_shapley_is_exact_for_additive() -> None:
    u = AdditiveUtility(weights=(1.0, 0.5, 0.0))
    column = shapley_sampled_column(u, [0.4, 1.0, 0.0], 50, 7)
    assert np.allclose(column, [0.4, 0.5, 0.0], atol=1e-12)


def test_proportional_shares() -> None:
    u = AdditiveUtility(weights=(1.0, 2.0))
    assert proportional_share(u, [1.0, 1.0], 0, [1.0, 1.0]) == pytest.approx(1.5)
    assert proportional_share(u, [1.0, 1.0], 1, [1.0, 1.0]) == pytest.approx(1.5)
    assert proportional_column(u, [0.0, 0.0], [1.0, 1.0]).tolist() == [0.0, 0.0]
    assert proportional_share(u, [0.0, 1.0], 0, [1.0, 1.0]) == 0.0


def test_proportional_rejects_positive_value_without_weighted_support(sqrt_utility) -> None:
    with pytest.raises(InvariantViolation):
        proportional_column(sqrt_utility, [1.0, 1.0], [0.0, 0.0])


def test_perturbed_share_adds_linear_term(two_agent_instance: Instance, exact_oracle: ShareOracle) -> None:
    x = ExchangeMatrix.full(2).with_entry(0, 1, 0.5)
    u = two_agent_instance.utilities[1]
    # base share 2 * 0.5 = 1.0 plus (0.1 / 2) * 0.5
    assert perturbed_share(exact_oracle, u, x, 0, 1, 0.1, 2) == pytest.approx(1.025)
    assert perturbed_share(exact_oracle, u, ExchangeMatrix.zeros(2), 0, 1, 0.1, 2) == 0.0


def test_perturbed_oracle_is_efficient_against_perturbed_utility(perturbed_oracle: ShareOracle) -> None:
    inst = generate_instance(4, "concave_of_sum", 0.1, seed=2).to_instance()
    oracle = ShareOracle(inst.share_rule, perturbation=Perturbation(eps=0.1, n=4))
    u = inst.utilities[3]
    b = np.array([0.3, 0.8, 1.0, 0.0])
    column = oracle.column_shares(u, b, 3)
    assert abs(column.sum() - oracle.utility_value(u, b)) <= 1e-9
    assert abs(oracle.utility_value(u, b) - (u.evaluate(b) + 0.025 * b.sum())) <= 1e-12
    assert perturbed_oracle.perturbed
    assert not perturbed_oracle.unperturbed().perturbed


def test_oracle_memoizes_columns_until_cleared(exact_oracle: ShareOracle, two_agent_instance: Instance) -> None:
    u = two_agent_instance.utilities[1]
    b = np.array([0.7, 0.0])
    before = _cache_hits()
    exact_oracle.column_shares(u, b, 1)
    exact_oracle.column_shares(u, b, 1)
    assert _cache_hits() == before + 1
    exact_oracle.clear_cache()
    exact_oracle.column_shares(u, b, 1)
    assert _cache_hits() == before + 1


def test_oracle_memo_never_serves_a_discarded_utility(exact_oracle: ShareOracle) -> None:
    b = np.array([0.6, 0.0])
    for weight in range(1, 200):
        # short-lived utilities are allocated back to back and often land on the same address
        column = exact_oracle.column_shares(AdditiveUtility(weights=(float(weight), 0.0)), b, 1)
        assert column[0] == pytest.approx(0.6 * weight)

def test_oracle_dispatches_on_rule() -> None:
    u = AdditiveUtility(weights=(1.0, 3.0, 0.0))
    b = np.array([1.0, 1.0, 0.0])
    proportional = ShareOracle(ShareRule(kind=ShareRuleKind.PROPORTIONAL))
    assert proportional.column_shares(u, b, 2).tolist() == pytest.approx([2.0, 2.0, 0.0])
    sampled = ShareOracle(ShareRule(kind=ShareRuleKind.SHAPLEY_SAMPLED, samples=10))
    assert sampled.column_shares(u, b, 2).tolist() == pytest.approx([1.0, 3.0, 0.0])


@pytest.mark.parametrize("family", ["additive", "concave_of_sum", "coverage"])
def test_exact_shapley_is_efficient_over_random_exchanges(family: str) -> None:
    rng = np.random.default_rng(23)
    for trial in range(70):
        n = int(rng.integers(2, 6))
        inst = generate_instance(n, family, 0.1, seed=trial).to_instance()
        oracle = ShareOracle.for_instance(inst)
        values = rng.uniform(size=(n, n))
        values[rng.uniform(size=(n, n)) < 0.2] = 0.0
        np.fill_diagonal(values, 0.0)
        x = ExchangeMatrix(values)
        for j, u in enumerate(inst.utilities):
            column = oracle.column_shares(u, x.bundle(j), j)
            assert abs(column.sum() - u.evaluate(x.bundle(j))) <= 1e-9
            assert np.all(column[x.bundle(j) == 0.0] == 0.0)


@pytest.mark.parametrize("family", ["concave_of_sum", "coverage"])
def test_exact_shapley_is_monotone_and_cross_monotone(family: str) -> None:
    rng = np.random.default_rng(31)
    h = 1e-3
    for probe in range(500):
        n = 4
        inst = generate_instance(n, family, 0.1, seed=probe % 25)
        u = inst.utilities[0]
        b = rng.uniform(0.0, 1.0 - h, size=n)
        b[0] = 0.0
        i, other = rng.choice([1, 2, 3], size=2, replace=False)
        base = shapley_column(u, b)
        own = b.copy()
        own[i] += h
        assert shapley_column(u, own)[i] >= base[i] - 1e-9
        cross = b.copy()
        cross[other] += h
        assert shapley_column(u, cross)[i] <= base[i] + 1e-9
