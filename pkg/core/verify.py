"""Independent certification of exchanges and solver traces.

Nothing here trusts the solver: reciprocity is recomputed on the original utilities,
core stability is checked by enumerating coalitions, and traces are replayed step by step.
"""

from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.graph import build_exchange_graph, is_acyclic
from core.models import (
    ExchangeMatrix,
    Instance,
    SolverTrace,
    StepRecord,
    SurplusProfile,
    derive_constants,
    descending_order,
)
from core.parallel import ordered_map
from core.shares import Perturbation, ShareOracle
from core.solver import lex_compare, progress_slack, select_high_surplus_set
from core.surplus import compute_surplus
from shared import telemetry
from shared.constants import (
    EFFICIENCY_TOLERANCE,
    FINITE_DIFFERENCE_STEP,
    MAX_BRUTEFORCE_AGENTS,
    MONOTONICITY_TOLERANCE,
    RECOMPUTE_TOLERANCE,
    ZERO_SUM_TOLERANCE,
)
from shared.enums import Ordering, ShareRuleKind, StepKind
from shared.errors import InvariantViolation, PreconditionError, TraceFormatError

logger = logging.getLogger("fairx.verify")

COALITION_BLOCK = 1 << 14


class ReciprocityResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    passed: bool
    delta: float
    max_abs_surplus: float
    surplus: list[float]


class BlockingWitness(BaseModel):
    model_config = ConfigDict(extra="forbid")

    coalition: list[int]
    gains: list[float]


class CoreStabilityResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    passed: bool
    epsilon: float
    core_stable_at: float
    witness: BlockingWitness | None = None
    coalitions_checked: int


class AxiomResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    axiom: str
    passed: bool
    worst_residual: float
    tolerance: float
    trials: int
    informational: bool = False


class TraceViolation(BaseModel):
    model_config = ConfigDict(extra="forbid")

    step: int
    kind: StepKind
    message: str


class TraceCheck(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ok: bool
    steps_checked: int
    violation: TraceViolation | None = None


class VerificationReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epsilon: float
    reciprocal_at: float
    reciprocity: ReciprocityResult
    core_stable_at: float | None = None
    blocking_witness: BlockingWitness | None = None
    core: CoreStabilityResult | None = None
    axiom_results: list[AxiomResult] = Field(default_factory=list)
    trace_ok: bool | None = None
    trace_violation: TraceViolation | None = None

    @property
    def passed(self) -> bool:
        checks = [self.reciprocity.passed]
        if self.core is not None:
            checks.append(self.core.passed)
        checks.extend(result.passed for result in self.axiom_results if not result.informational)
        if self.trace_ok is not None:
            checks.append(self.trace_ok)
        return all(checks)


def check_reciprocity(inst: Instance, x: ExchangeMatrix, oracle: ShareOracle, delta: float) -> ReciprocityResult:
    profile = compute_surplus(inst, x, oracle.unperturbed())
    worst = float(np.max(np.abs(profile.delta)))
    return ReciprocityResult(
        passed=worst <= delta,
        delta=delta,
        max_abs_surplus=worst,
        surplus=profile.to_list(),
    )


def _membership(start: int, stop: int, n: int) -> np.ndarray:
    masks = np.arange(start, stop, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(bool)


def _block_min_gains(inst: Instance, current: np.ndarray, start: int, stop: int) -> np.ndarray:
    membership = _membership(start, stop, inst.n)
    lowest = np.full(membership.shape[0], np.inf)
    for i, spec in enumerate(inst.utilities):
        rows = membership[:, i]
        if not rows.any():
            continue
        bundles = membership[rows].astype(float)
        bundles[:, i] = 0.0
        gains = spec.evaluate_batch(bundles) - current[i]
        lowest[rows] = np.minimum(lowest[rows], gains)
    return lowest


def _coalition_key(mask: int, n: int) -> tuple[int, tuple[int, ...]]:
    members = tuple(k for k in range(n) if mask >> k & 1)
    return len(members), members


def check_core_stability_bruteforce(
    inst: Instance,
    x: ExchangeMatrix,
    eps: float,
    workers: int = 1,
) -> CoreStabilityResult:
    """Full-share deviation y[S] for every nonempty coalition S.

    Utilities are monotone, so no deviation inside S beats sharing everything within S.
    Witnesses follow size-then-lexicographic order over coalitions.
    """
    n = inst.n
    if n > MAX_BRUTEFORCE_AGENTS:
        raise PreconditionError(f"brute-force core check caps at {MAX_BRUTEFORCE_AGENTS} agents, got {n}")
    if x.n != n:
        raise PreconditionError(f"exchange covers {x.n} agents but the instance has {n}")

    current = np.array([spec.evaluate(x.bundle(i)) for i, spec in enumerate(inst.utilities)])
    total = 1 << n
    blocks = [(start, min(start + COALITION_BLOCK, total)) for start in range(1, total, COALITION_BLOCK)]
    mins = ordered_map(lambda span: _block_min_gains(inst, current, *span), blocks, workers=workers)
    lowest = np.concatenate(mins)
    telemetry.COALITIONS_CHECKED.inc(total - 1)

    core_stable_at = max(0.0, float(lowest.max()))
    blocking = np.flatnonzero(lowest > eps) + 1
    witness = None
    if blocking.size:
        first = min((int(mask) for mask in blocking), key=lambda mask: _coalition_key(mask, n))
        members = list(_coalition_key(first, n)[1])
        deviation = np.zeros(n, dtype=float)
        deviation[members] = 1.0
        gains = []
        for i in members:
            bundle = deviation.copy()
            bundle[i] = 0.0
            gains.append(inst.utilities[i].evaluate(bundle) - float(current[i]))
        witness = BlockingWitness(coalition=members, gains=gains)
        logger.info("blocking coalition %s at eps=%s", members, eps)
    return CoreStabilityResult(
        passed=witness is None,
        epsilon=eps,
        core_stable_at=core_stable_at,
        witness=witness,
        coalitions_checked=total - 1,
    )


def _random_bundle(rng: np.random.Generator, n: int, j: int) -> np.ndarray:
    bundle = rng.uniform(0.0, 1.0, size=n)
    bundle[rng.uniform(size=n) < 0.25] = 0.0
    bundle[j] = 0.0
    return bundle


def _bump(bundle: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    low = bundle.copy()
    high = bundle.copy()
    low[k] = min(float(bundle[k]), 1.0 - FINITE_DIFFERENCE_STEP)
    high[k] = low[k] + FINITE_DIFFERENCE_STEP
    return low, high


def audit_share_axioms(inst: Instance, oracle: ShareOracle, trials: int, seed: int = 0) -> list[AxiomResult]:
    if trials < 1:
        raise PreconditionError("share audit needs at least one trial")
    n = inst.n
    rng = np.random.default_rng(seed)
    worst = {"efficiency": 0.0, "normalization": 0.0, "monotonicity": 0.0, "cross_monotonicity": 0.0}
    cross_trials = 0
    for _ in range(trials):
        j = int(rng.integers(n))
        spec = inst.utilities[j]
        bundle = _random_bundle(rng, n, j)
        column = oracle.column_shares(spec, bundle, j)
        worst["efficiency"] = max(worst["efficiency"], abs(float(column.sum()) - oracle.utility_value(spec, bundle)))
        if np.any(bundle == 0.0):
            worst["normalization"] = max(worst["normalization"], float(np.max(np.abs(column[bundle == 0.0]))))

        donors = [k for k in range(n) if k != j]
        i = int(rng.choice(donors))
        low, high = _bump(bundle, i)
        drop = float(oracle.column_shares(spec, low, j)[i] - oracle.column_shares(spec, high, j)[i])
        worst["monotonicity"] = max(worst["monotonicity"], drop)

        others = [k for k in donors if k != i]
        if others:
            k = int(rng.choice(others))
            low, high = _bump(bundle, k)
            rise = float(oracle.column_shares(spec, high, j)[i] - oracle.column_shares(spec, low, j)[i])
            worst["cross_monotonicity"] = max(worst["cross_monotonicity"], rise)
            cross_trials += 1

    tolerances = {
        "efficiency": EFFICIENCY_TOLERANCE,
        "normalization": EFFICIENCY_TOLERANCE,
        "monotonicity": MONOTONICITY_TOLERANCE,
        "cross_monotonicity": MONOTONICITY_TOLERANCE,
    }
    informational = inst.share_rule.kind == ShareRuleKind.PROPORTIONAL
    results = [
        AxiomResult(
            axiom=name,
            passed=worst[name] <= tolerances[name],
            worst_residual=worst[name],
            tolerance=tolerances[name],
            trials=cross_trials if name == "cross_monotonicity" else trials,
            informational=informational and name == "cross_monotonicity",
        )
        for name in worst
    ]
    for result in results:
        if not result.passed:
            logger.warning("share axiom %s residual %.3e above tolerance", result.axiom, result.worst_residual)
    return results


def profile_from_surplus(surplus: list[float]) -> SurplusProfile:
    delta = np.asarray(surplus, dtype=float)
    n = delta.shape[0]
    return SurplusProfile(
        delta=delta,
        shares=np.zeros((n, n), dtype=float),
        utilities=np.zeros(n, dtype=float),
        sorted_view=descending_order(delta),
    )


def _check_structure(trace: SolverTrace, inst: Instance) -> None:
    n = inst.n
    if trace.n != n:
        raise TraceFormatError(f"trace covers {trace.n} agents but the instance has {n}")
    if len(trace.initial_surplus) != n or len(trace.initial_exchange) != n:
        raise TraceFormatError("trace header does not match the instance size")
    for position, step in enumerate(trace.steps):
        if step.index != position:
            raise TraceFormatError(f"step at position {position} carries index {step.index}")
        if len(step.surplus_before) != n:
            raise TraceFormatError(f"step {position} records {len(step.surplus_before)} surpluses, expected {n}")
        for a, b in step.touched:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise TraceFormatError(f"step {position} touches invalid entry ({a}, {b})")
        if any(not 0 <= agent < n for agent in step.agent_set):
            raise TraceFormatError(f"step {position} names an agent outside 0..{n - 1}")


def _check_constants(trace: SolverTrace, inst: Instance) -> None:
    recorded = trace.constants
    expected = derive_constants(inst.epsilon, inst.n, inst.lipschitz, max_outer_iters=recorded.max_outer_iters)
    if recorded.tol_bs != expected.tol_bs:
        if recorded.tol_bs * inst.lipschitz > inst.epsilon / (64 * inst.n**4):
            raise TraceFormatError(
                f"trace binary-search tolerance {recorded.tol_bs!r} is too coarse for this instance"
            )
        expected = derive_constants(
            inst.epsilon,
            inst.n,
            inst.lipschitz,
            tol_bs=recorded.tol_bs,
            max_outer_iters=recorded.max_outer_iters,
        )
    found = recorded.model_dump()
    mismatched = sorted(name for name, value in expected.model_dump().items() if found[name] != value)
    if mismatched:
        raise TraceFormatError(f"trace constants do not match the instance: {', '.join(mismatched)}")


def _check_increase(step: StepRecord, agents: set[int], trace: SolverTrace) -> str | None:
    constants = trace.constants
    if len(step.touched) != 1:
        return f"flow increase changed {len(step.touched)} entries"
    donor, receiver = step.touched[0]
    if donor in agents or receiver not in agents:
        return f"flow increase on ({donor}, {receiver}) does not cross into S"
    before, after = step.entries_before[0], step.entries_after[0]
    if not before < 1.0 - constants.alpha:
        return f"flow increase on an entry without headroom ({before!r})"
    if after != min(1.0, before + constants.increase_step):
        return f"flow increase moved the entry by {after - before!r}, expected {constants.increase_step!r}"
    return None


def _check_decrease(step: StepRecord, agents: list[int], trace: SolverTrace) -> str | None:
    constants = trace.constants
    slack = constants.progress_slack
    j = step.receiver
    if j is None or j in agents:
        return "flow decrease without a receiver outside S"
    if step.inner_iterations > constants.phase_iteration_bound:
        return f"flow decrease ran {step.inner_iterations} inner iterations"
    if len(step.floors) != len(agents):
        return "flow decrease records the wrong number of floors"
    for (a, b), before, after in zip(step.touched, step.entries_before, step.entries_after, strict=True):
        if b != j or a not in agents or after > before:
            return f"flow decrease changed ({a}, {b}) from {before!r} to {after!r}"
    start = np.asarray(step.surplus_before)
    end = np.asarray(step.surplus_after)
    for floor, i in zip(step.floors, agents, strict=True):
        if abs(floor - (start[i] - constants.floor_offset)) > RECOMPUTE_TOLERANCE:
            return f"floor for agent {i} does not sit eps/2n^3 below its surplus"
    outside = [k for k in range(trace.n) if k not in agents]
    rises = end[agents] - start[agents]
    if np.any(rises > slack):
        return "an S surplus increased during flow decrease"
    if step.touched and float((-rises).max()) < constants.phase_gap - slack:
        return "no S surplus fell by eps/4n^3 during flow decrease"
    if float(end[outside].max()) >= float(end[agents].min()) + slack:
        return "an agent outside S overtook S during flow decrease"
    if np.any(end[outside] < start[outside] - slack):
        return "a surplus outside S fell during flow decrease"
    return None


def validate_trace(trace: SolverTrace, inst: Instance, oracle: ShareOracle | None = None) -> TraceCheck:
    """Replay a trace against the instance; the first violated step is reported.

    Surpluses are recomputed from the replayed exchange on the perturbed instance, so pass the
    solver's oracle when it was seeded differently from the instance's share rule.
    """
    _check_structure(trace, inst)
    _check_constants(trace, inst)
    constants = trace.constants
    shares = oracle or ShareOracle(inst.share_rule, perturbation=Perturbation(eps=inst.epsilon, n=inst.n))
    if not shares.perturbed:
        raise PreconditionError("traces record perturbed surpluses; pass a perturbed oracle")
    x = np.array(trace.initial_exchange, dtype=float)
    surplus = list(trace.initial_surplus)
    try:
        start = ExchangeMatrix(x.copy())
    except ValueError as exc:
        raise TraceFormatError(f"trace starts from an invalid exchange: {exc}") from exc
    if np.max(np.abs(compute_surplus(inst, start, shares).delta - np.asarray(surplus))) > RECOMPUTE_TOLERANCE:
        raise TraceFormatError("trace initial surplus does not match the instance")
    selected: list[int] | None = None

    def fail(step: StepRecord, message: str) -> TraceCheck:
        logger.warning("trace violation at step %d (%s): %s", step.index, step.kind.value, message)
        return TraceCheck(
            ok=False,
            steps_checked=step.index,
            violation=TraceViolation(step=step.index, kind=step.kind, message=message),
        )

    acyclic, cycle = is_acyclic(build_exchange_graph(start, constants.alpha))
    if not acyclic:
        raise TraceFormatError(f"trace starts from an exchange with the cycle {cycle}")

    for step in trace.steps:
        if np.max(np.abs(np.asarray(step.surplus_before) - np.asarray(surplus))) > RECOMPUTE_TOLERANCE:
            return fail(step, "surplus snapshot does not continue from the previous step")
        if abs(sum(step.surplus_after)) > ZERO_SUM_TOLERANCE:
            return fail(step, f"surpluses sum to {sum(step.surplus_after)!r}")

        if step.kind == StepKind.SELECT_S:
            try:
                expected = list(select_high_surplus_set(profile_from_surplus(step.surplus_before), constants))
            except InvariantViolation as exc:
                return fail(step, str(exc))
            if sorted(step.agent_set) != expected:
                return fail(step, f"S recorded as {step.agent_set}, recomputed as {expected}")
            if step.surplus_after != step.surplus_before:
                return fail(step, "selecting S changed the surpluses")
            selected = expected
            continue

        if selected is None or sorted(step.agent_set) != selected:
            return fail(step, "action step does not follow the S it was selected with")
        for (a, b), before in zip(step.touched, step.entries_before, strict=True):
            if x[a, b] != before:
                return fail(step, f"entry ({a}, {b}) recorded as {before!r} but replays as {x[a, b]!r}")

        if step.kind == StepKind.INCREASE_FLOW:
            problem = _check_increase(step, set(selected), trace)
        else:
            problem = _check_decrease(step, selected, trace)
        if problem is not None:
            return fail(step, problem)

        for (a, b), after in zip(step.touched, step.entries_after, strict=True):
            x[a, b] = after
        try:
            replayed = ExchangeMatrix(x.copy())
        except ValueError as exc:
            return fail(step, str(exc))
        shares.clear_cache()
        recomputed = compute_surplus(inst, replayed, shares).delta
        drift = float(np.max(np.abs(recomputed - np.asarray(step.surplus_after))))
        if drift > RECOMPUTE_TOLERANCE:
            return fail(step, f"recorded surplus differs from the recomputed surplus by {drift:.3e}")
        acyclic, cycle = is_acyclic(build_exchange_graph(replayed, constants.alpha))
        if not acyclic:
            return fail(step, f"exchange graph has the cycle {cycle}")

        ordering = lex_compare(
            profile_from_surplus(step.surplus_after),
            profile_from_surplus(step.surplus_before),
            progress_slack(step.kind, constants),
        )
        if ordering != Ordering.LESS:
            return fail(step, f"sorted surplus profile compared {ordering.value}, expected less")
        surplus = list(step.surplus_after)
        selected = None

    return TraceCheck(ok=True, steps_checked=len(trace.steps))


def build_report(
    inst: Instance,
    x: ExchangeMatrix,
    eps: float,
    *,
    trace: SolverTrace | None = None,
    audit_trials: int = 0,
    seed: int = 0,
    workers: int = 1,
    check_core: bool = True,
    oracle: ShareOracle | None = None,
) -> VerificationReport:
    share_oracle = oracle or ShareOracle.for_instance(inst, workers=workers)
    reciprocity = check_reciprocity(inst, x, share_oracle, eps)
    core = check_core_stability_bruteforce(inst, x, eps, workers=workers) if check_core else None
    axioms = audit_share_axioms(inst, share_oracle, audit_trials, seed) if audit_trials > 0 else []
    trace_check = validate_trace(trace, inst) if trace is not None else None
    report = VerificationReport(
        epsilon=eps,
        reciprocal_at=reciprocity.max_abs_surplus,
        reciprocity=reciprocity,
        core_stable_at=core.core_stable_at if core else None,
        blocking_witness=core.witness if core else None,
        core=core,
        axiom_results=axioms,
        trace_ok=trace_check.ok if trace_check else None,
        trace_violation=trace_check.violation if trace_check else None,
    )
    logger.info(
        "verification finished",
        extra={
            "epsilon": eps,
            "reciprocal_at": report.reciprocal_at,
            "core_stable_at": report.core_stable_at,
            "passed": report.passed,
        },
    )
    return report
