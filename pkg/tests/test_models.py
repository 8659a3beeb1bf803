from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from core.models import ExchangeMatrix, Instance, descending_order, derive_constants
from core.shares import ShareOracle
from core.surplus import bundle, compute_surplus, recompute_surplus_after_column_change
from core.utilities import AdditiveUtility
from fairx.instances import generate_instance
from shared.errors import InvariantViolation


def test_bundle_reads_columns_with_zero_diagonal() -> None:
    assert bundle(ExchangeMatrix.zeros(3), 0).tolist() == [0.0, 0.0, 0.0]
    assert bundle(ExchangeMatrix.full(3), 1).tolist() == [1.0, 0.0, 1.0]
    x = ExchangeMatrix.zeros(3).with_entry(0, 1, 0.3).with_entry(2, 1, 0.7)
    assert bundle(x, 1).tolist() == [0.3, 0.0, 0.7]


def test_bundle_rejects_out_of_range_agent() -> None:
    with pytest.raises(IndexError):
        bundle(ExchangeMatrix.full(2), 2)


def test_exchange_matrix_validates_entries() -> None:
    with pytest.raises(ValueError, match="outside"):
        ExchangeMatrix.from_rows([[0.0, 1.2], [0.0, 0.0]])
    with pytest.raises(ValueError, match="diagonal"):
        ExchangeMatrix.from_rows([[0.5, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="square"):
        ExchangeMatrix.from_rows([[0.0, 1.0, 1.0], [0.0, 0.0, 1.0]])


def test_exchange_matrix_is_read_only() -> None:
    x = ExchangeMatrix.full(2)
    with pytest.raises(ValueError):
        x.values[0, 1] = 0.5


def test_compute_surplus_on_two_agent_instance(two_agent_instance: Instance, exact_oracle: ShareOracle) -> None:
    assert compute_surplus(two_agent_instance, ExchangeMatrix.zeros(2), exact_oracle).to_list() == [0.0, 0.0]

    full = compute_surplus(two_agent_instance, ExchangeMatrix.full(2), exact_oracle)
    assert full.delta.tolist() == pytest.approx([1.0, -1.0], abs=1e-12)
    assert full.sorted_view == (0, 1)

    balanced = ExchangeMatrix.full(2).with_entry(0, 1, 0.5)
    assert compute_surplus(two_agent_instance, balanced, exact_oracle).delta.tolist() == pytest.approx(
        [0.0, 0.0], abs=1e-12
    )


def test_incremental_recompute_matches_full(two_agent_instance: Instance, exact_oracle: ShareOracle) -> None:
    x = ExchangeMatrix.full(2)
    profile = compute_surplus(two_agent_instance, x, exact_oracle)

    same = recompute_surplus_after_column_change(profile, two_agent_instance, x, exact_oracle, 1)
    assert same.delta.tolist() == profile.delta.tolist()

    halved = x.with_entry(0, 1, 0.5)
    updated = recompute_surplus_after_column_change(profile, two_agent_instance, halved, exact_oracle, 1, debug=True)
    assert updated.delta.tolist() == pytest.approx([0.0, 0.0], abs=1e-12)


def test_incremental_recompute_debug_catches_foreign_column(
    two_agent_instance: Instance, exact_oracle: ShareOracle
) -> None:
    x = ExchangeMatrix.full(2)
    profile = compute_surplus(two_agent_instance, x, exact_oracle)
    moved = x.with_entry(1, 0, 0.5)
    with pytest.raises(InvariantViolation, match="full recompute"):
        recompute_surplus_after_column_change(profile, two_agent_instance, moved, exact_oracle, 1, debug=True)


def test_incremental_recompute_on_coverage_instance() -> None:
    inst = generate_instance(3, "coverage", 0.1, seed=11).to_instance()
    oracle = ShareOracle.for_instance(inst)
    rng = np.random.default_rng(5)
    values = rng.uniform(size=(3, 3))
    np.fill_diagonal(values, 0.0)
    x = ExchangeMatrix(values)
    profile = compute_surplus(inst, x, oracle)
    for _ in range(10):
        j = int(rng.integers(3))
        i = int(rng.choice([k for k in range(3) if k != j]))
        x = x.with_entry(i, j, float(rng.uniform()))
        profile = recompute_surplus_after_column_change(profile, inst, x, oracle, j)
        full = compute_surplus(inst, x, oracle)
        assert np.max(np.abs(full.delta - profile.delta)) <= 1e-9


@pytest.mark.parametrize("family", ["additive", "concave_of_sum", "coverage"])
def test_surpluses_sum_to_zero_under_exact_shapley(family: str) -> None:
    rng = np.random.default_rng(17)
    for seed in range(10):
        inst = generate_instance(4, family, 0.1, seed=seed).to_instance()
        values = rng.uniform(size=(4, 4))
        np.fill_diagonal(values, 0.0)
        profile = compute_surplus(inst, ExchangeMatrix(values), ShareOracle.for_instance(inst))
        assert profile.zero_sum_residual <= 1e-9


def test_descending_order_breaks_ties_by_index() -> None:
    assert descending_order(np.array([0.5, 0.5, -1.0])) == (0, 1, 2)
    assert descending_order(np.array([-1.0, 0.2, 0.2])) == (1, 2, 0)


def test_instance_rejects_understated_lipschitz() -> None:
    with pytest.raises(ValidationError, match="declared L below analytic bound"):
        Instance(
            n=2,
            utilities=(AdditiveUtility(weights=(0.0, 1.0)), AdditiveUtility(weights=(2.0, 0.0))),
            epsilon=0.1,
            lipschitz=1.0,
        )


def test_instance_rejects_wrong_utility_count() -> None:
    with pytest.raises(ValidationError, match="expected 3 utilities"):
        Instance(
            n=3,
            utilities=(AdditiveUtility(weights=(0.0, 1.0, 1.0)),),
            epsilon=0.1,
            lipschitz=1.0,
        )


def test_full_sharing_utilities_stay_below_n_times_l(two_agent_instance: Instance) -> None:
    values = two_agent_instance.full_sharing_utilities()
    assert values == [1.0, 2.0]
    assert max(values) <= two_agent_instance.n * two_agent_instance.lipschitz


def test_derive_constants_for_small_instance() -> None:
    constants = derive_constants(0.1, 2, 2.0)
    assert constants.stop_threshold == pytest.approx(0.05)
    assert constants.selection_gap == pytest.approx(0.025)
    assert constants.floor_offset == pytest.approx(0.1 / 16)
    assert constants.phase_gap == pytest.approx(0.1 / 32)
    assert constants.alpha == pytest.approx(0.025)
    assert constants.increase_step == pytest.approx(0.00625)
    assert constants.tol_bs == pytest.approx(0.1 / 2048)
    assert constants.progress_slack == pytest.approx(2 * 2.0 * 0.1 / 2048)
    assert constants.phase_iteration_bound == pytest.approx(4 * 16 * 2 / 0.1 + 2)
    assert constants.max_outer_iters == 10 * 32 * 20
    assert set(constants.exact) >= {"alpha", "tol_bs", "increase_step"}


def test_derive_constants_respects_overrides() -> None:
    constants = derive_constants(0.1, 3, 1.0, tol_bs=1e-9, max_outer_iters=7)
    assert constants.tol_bs == 1e-9
    assert constants.max_outer_iters == 7
