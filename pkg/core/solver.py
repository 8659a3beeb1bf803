"""Local search for eps-reciprocal, eps-core-stable exchanges on the perturbed instance.

Each outer iteration picks the high-surplus set S, then either raises one flow from
outside S into S (when the exchange graph has such an edge) or lowers flows from S to a
single receiver. Progress is certified by a strict lexicographic decrease of the
descending-sorted surplus profile.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.graph import build_exchange_graph, edges_from_to, is_acyclic
from core.models import (
    ExchangeMatrix,
    Instance,
    SolverConstants,
    SolverTrace,
    StepRecord,
    SurplusProfile,
    derive_constants,
)
from core.shares import Perturbation, ShareOracle
from core.surplus import compute_surplus, recompute_surplus_after_column_change
from shared import telemetry
from shared.constants import DEFAULT_SHAPLEY_CAP, REVERSAL_TOLERANCE
from shared.enums import Ordering, SolverStatus, StepKind
from shared.errors import CrossMonotonicityViolation, InvariantViolation, PreconditionError

logger = logging.getLogger("fairx.solver")


class SolverConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epsilon: float = Field(gt=0, lt=1)
    lipschitz: float = Field(ge=1)
    max_outer_iters: int | None = Field(default=None, ge=1)
    tol_bs: float | None = Field(default=None, gt=0)
    record_trace: bool = True
    seed: int | None = None
    allow_noncrossmonotone: bool = False
    check_invariants: bool = True
    debug_recompute: bool = False
    shapley_cap: int = Field(default=DEFAULT_SHAPLEY_CAP, ge=2)
    workers: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def validate_tolerance(self) -> "SolverConfig":
        if self.tol_bs is not None and self.tol_bs * self.lipschitz > self.epsilon / 64:
            raise ValueError("tol_bs * L exceeds eps / 64")
        return self

    @classmethod
    def for_instance(cls, inst: Instance, **overrides: object) -> "SolverConfig":
        return cls.model_validate({"epsilon": inst.epsilon, "lipschitz": inst.lipschitz, **overrides})

    def constants(self, n: int) -> SolverConstants:
        if self.tol_bs is not None and self.tol_bs * self.lipschitz > self.epsilon / (64 * n**4):
            raise PreconditionError(f"tol_bs={self.tol_bs!r} too coarse for n={n}")
        return derive_constants(
            self.epsilon,
            n,
            self.lipschitz,
            tol_bs=self.tol_bs,
            max_outer_iters=self.max_outer_iters,
        )


class Certification(BaseModel):
    model_config = ConfigDict(extra="forbid")

    reciprocal_3eps: bool
    graph_acyclic: bool


class SolverResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n: int
    x_final: list[list[float]]
    surplus_perturbed: list[float]
    surplus_original: list[float]
    status: SolverStatus
    outer_iterations: int
    constants: SolverConstants
    certified: Certification
    trace: SolverTrace | None = None

    def exchange(self) -> ExchangeMatrix:
        return ExchangeMatrix.from_rows(self.x_final)


@dataclass(frozen=True, slots=True)
class PhaseOutcome:
    x: ExchangeMatrix
    profile: SurplusProfile
    inner_iterations: int
    floors: dict[int, float]
    touched: list[tuple[int, int]]


def select_high_surplus_set(profile: SurplusProfile, constants: SolverConstants) -> tuple[int, ...]:
    """Grow S down the sorted profile while the next surplus is within eps/n^2 of min over S."""
    order = profile.sorted_view
    members = [order[0]]
    lowest = float(profile.delta[order[0]])
    for agent in order[1:]:
        value = float(profile.delta[agent])
        if value < lowest - constants.selection_gap:
            break
        members.append(agent)
        lowest = value
    if len(members) == profile.n:
        raise InvariantViolation("high-surplus set swallowed every agent; surpluses do not sum to zero")
    return tuple(sorted(members))


def find_receiver(profile: SurplusProfile, agents: tuple[int, ...], constants: SolverConstants) -> int:
    outside = [j for j in range(profile.n) if j not in agents]
    inflow = profile.shares[list(agents), :].sum(axis=0)
    best = max(outside, key=lambda j: (float(inflow[j]), -j))
    if float(inflow[best]) <= constants.selection_gap:
        raise InvariantViolation(
            f"no receiver outside S gets more than {constants.selection_gap:.3e} credited utility from S"
        )
    return best


def binary_search_reduction(
    x: ExchangeMatrix,
    i: int,
    j: int,
    floor: float,
    inst: Instance,
    oracle: ShareOracle,
    profile: SurplusProfile,
    tol_bs: float,
) -> float:
    """Lowest x_ij keeping Delta_i >= floor, to within tol_bs; 0 when even zero flow keeps it."""
    spec = inst.utilities[j]
    column = x.bundle(j)
    # column j only moves psi_{.j}; u_i is untouched because i != j
    fixed = float(profile.delta[i]) - float(profile.shares[i, j])

    def surplus_at(flow: float) -> float:
        telemetry.BINARY_SEARCH_PROBES.inc()
        probe = column.copy()
        probe[i] = flow
        return fixed + float(oracle.column_shares(spec, probe, j)[i])

    high = float(column[i])
    high_value = float(profile.delta[i])
    if high_value <= floor:
        return high
    low_value = surplus_at(0.0)
    if low_value >= floor:
        return 0.0
    low = 0.0
    while high - low > tol_bs:
        mid = 0.5 * (low + high)
        value = surplus_at(mid)
        if value < low_value - REVERSAL_TOLERANCE or value > high_value + REVERSAL_TOLERANCE:
            raise CrossMonotonicityViolation(
                f"surplus of agent {i} is not monotone in x[{i}, {j}] near {mid!r}"
            )
        if value >= floor:
            high, high_value = mid, value
        else:
            low, low_value = mid, value
    return high


def _check_phase(
    before: SurplusProfile,
    after: SurplusProfile,
    x_before: ExchangeMatrix,
    x_after: ExchangeMatrix,
    agents: tuple[int, ...],
    j: int,
    constants: SolverConstants,
    moved: bool,
) -> None:
    slack = constants.progress_slack
    inside = list(agents)
    outside = [k for k in range(before.n) if k not in agents]
    rises = after.delta[inside] - before.delta[inside]
    if np.any(rises > slack):
        raise InvariantViolation(f"flow decrease raised an S surplus by {float(rises.max()):.3e}")
    if moved and float((-rises).max()) < constants.phase_gap - slack:
        raise InvariantViolation("flow decrease left every S surplus within eps/4n^3 of its start")
    if float(after.delta[outside].max()) >= float(after.delta[inside].min()) + slack:
        raise InvariantViolation("an agent outside S overtook S during flow decrease")
    if np.any(after.delta[outside] < before.delta[outside] - slack):
        raise InvariantViolation("a surplus outside S fell during flow decrease")
    diff = x_after.values - x_before.values
    other_columns = np.delete(diff, j, axis=1)
    if np.any(other_columns != 0.0) or np.any(diff[:, j] > 0.0):
        raise InvariantViolation(f"flow decrease touched entries outside column {j} or raised a flow")


def decrease_flow_phase(
    x: ExchangeMatrix,
    agents: tuple[int, ...],
    j: int,
    inst: Instance,
    oracle: ShareOracle,
    constants: SolverConstants,
    profile: SurplusProfile,
    check_invariants: bool = True,
    debug_recompute: bool = False,
) -> PhaseOutcome:
    if len(agents) >= inst.n:
        raise PreconditionError("flow decrease needs S to be a proper subset of the agents")
    floors = {i: float(profile.delta[i]) - constants.floor_offset for i in agents}
    start_x, start_profile = x, profile
    touched: list[tuple[int, int]] = []
    iterations = 0
    while True:
        eligible = [
            i
            for i in agents
            if float(profile.delta[i]) - floors[i] > constants.phase_gap and x.values[i, j] > 0.0
        ]
        if not eligible:
            break
        iterations += 1
        if iterations > constants.phase_iteration_bound:
            raise InvariantViolation(
                f"flow decrease exceeded {constants.phase_iteration_bound:.0f} inner iterations"
            )
        i = max(eligible, key=lambda k: (float(profile.delta[k]) - floors[k], -k))
        flow = binary_search_reduction(x, i, j, floors[i], inst, oracle, profile, constants.tol_bs)
        x = x.with_entry(i, j, flow)
        profile = recompute_surplus_after_column_change(profile, inst, x, oracle, j, debug=debug_recompute)
        if (i, j) not in touched:
            touched.append((i, j))

    telemetry.PHASE_INNER_ITERATIONS.observe(iterations)
    if check_invariants:
        _check_phase(start_profile, profile, start_x, x, agents, j, constants, moved=iterations > 0)
    return PhaseOutcome(x=x, profile=profile, inner_iterations=iterations, floors=floors, touched=sorted(touched))


def increase_flow_step(x: ExchangeMatrix, j: int, i: int, constants: SolverConstants) -> ExchangeMatrix:
    current = float(x.values[j, i])
    if not current < 1.0 - constants.alpha:
        raise PreconditionError(
            f"x[{j}, {i}] = {current!r} has no headroom below 1 - eps/(nL) = {1.0 - constants.alpha!r}"
        )
    return x.with_entry(j, i, min(1.0, current + constants.increase_step))


def lex_compare(profile_a: SurplusProfile, profile_b: SurplusProfile, slack: float) -> Ordering:
    first = profile_a.sorted_values
    second = profile_b.sorted_values
    if first.shape != second.shape:
        raise PreconditionError("profiles must cover the same agents")
    for a, b in zip(first, second, strict=True):
        if abs(float(a) - float(b)) <= slack:
            continue
        return Ordering.LESS if a < b else Ordering.GREATER
    return Ordering.EQUAL


def potential_exact(profile: SurplusProfile, epsilon: float, lipschitz: float) -> Fraction:
    """Sum of (nL/eps)^(2(n-k)) * k-th largest surplus, in exact rationals."""
    n = profile.n
    base = (n * Fraction(lipschitz) / Fraction(epsilon)) ** 2
    total = Fraction(0)
    for rank, value in enumerate(profile.sorted_values, start=1):
        total += base ** (n - rank) * Fraction(float(value))
    return total


def _progress_terms(before: SurplusProfile, after: SurplusProfile, agents: tuple[int, ...]) -> tuple[float, float]:
    inside = list(agents)
    outside = [k for k in range(before.n) if k not in agents]
    h1 = float((before.delta[inside] - after.delta[inside]).sum())
    h2 = float(np.maximum(0.0, after.delta[outside] - before.delta[outside]).sum())
    return h1, h2


def progress_slack(kind: StepKind, constants: SolverConstants) -> float:
    # raising a flow involves no binary search, so its surplus changes are exact
    return constants.progress_slack if kind == StepKind.DECREASE_FLOW else 0.0


class _TraceRecorder:
    def __init__(self, enabled: bool, x: ExchangeMatrix, profile: SurplusProfile, constants: SolverConstants) -> None:
        self.enabled = enabled
        self.trace = SolverTrace(
            n=x.n,
            constants=constants,
            initial_exchange=x.to_rows(),
            initial_surplus=profile.to_list(),
        )

    def add(self, **fields: object) -> None:
        if self.enabled:
            self.trace.steps.append(StepRecord.model_validate({"index": len(self.trace.steps), **fields}))


def run_local_search(
    inst: Instance,
    cfg: SolverConfig,
    oracle: ShareOracle | None = None,
) -> SolverResult:
    if not inst.share_rule.cross_monotone and not cfg.allow_noncrossmonotone:
        raise PreconditionError(
            f"share rule {inst.share_rule.kind.value} is not cross-monotone; "
            "pass allow_noncrossmonotone to run it anyway"
        )
    n = inst.n
    constants = cfg.constants(n)
    rule = inst.share_rule if cfg.seed is None else inst.share_rule.model_copy(update={"seed": cfg.seed})
    perturbed = oracle or ShareOracle(
        rule,
        perturbation=Perturbation(eps=inst.epsilon, n=n),
        cap=cfg.shapley_cap,
        workers=cfg.workers,
    )
    if not perturbed.perturbed:
        raise PreconditionError("local search runs on the perturbed instance; pass a perturbed oracle")
    everyone = tuple(range(n))

    x = ExchangeMatrix.full(n)
    profile = compute_surplus(inst, x, perturbed)
    recorder = _TraceRecorder(cfg.record_trace, x, profile, constants)
    status = SolverStatus.MAX_ITERS_EXCEEDED
    iteration = 0
    logger.info(
        "local search started",
        extra={"n": n, "epsilon": inst.epsilon, "lipschitz": inst.lipschitz, "max_outer_iters": constants.max_outer_iters},
    )

    while iteration < constants.max_outer_iters:
        if profile.max_surplus <= constants.stop_threshold:
            status = SolverStatus.CONVERGED
            break
        perturbed.clear_cache()
        agents = select_high_surplus_set(profile, constants)
        telemetry.SOLVER_STEPS.labels(kind=StepKind.SELECT_S.value).inc()
        recorder.add(
            outer_iteration=iteration,
            kind=StepKind.SELECT_S,
            agent_set=list(agents),
            surplus_before=profile.to_list(),
            surplus_after=profile.to_list(),
        )

        graph = build_exchange_graph(x, constants.alpha)
        outside = [k for k in everyone if k not in agents]
        crossing = edges_from_to(graph, outside, agents)
        before_x, before = x, profile
        if crossing:
            donor, receiver = crossing[0]
            kind = StepKind.INCREASE_FLOW
            x = increase_flow_step(x, donor, receiver, constants)
            profile = recompute_surplus_after_column_change(
                profile, inst, x, perturbed, receiver, debug=cfg.debug_recompute
            )
            touched = [(donor, receiver)]
            floors: list[float] = []
            inner = 0
            target: int | None = receiver
        else:
            kind = StepKind.DECREASE_FLOW
            target = find_receiver(profile, agents, constants)
            outcome = decrease_flow_phase(
                x,
                agents,
                target,
                inst,
                perturbed,
                constants,
                profile,
                check_invariants=cfg.check_invariants,
                debug_recompute=cfg.debug_recompute,
            )
            x, profile = outcome.x, outcome.profile
            touched = outcome.touched
            floors = [outcome.floors[i] for i in agents]
            inner = outcome.inner_iterations
        telemetry.SOLVER_STEPS.labels(kind=kind.value).inc()

        acyclic, cycle = is_acyclic(build_exchange_graph(x, constants.alpha))
        if not acyclic:
            raise InvariantViolation(f"exchange graph acquired the cycle {cycle} at iteration {iteration}")
        ordering = lex_compare(profile, before, progress_slack(kind, constants))
        if ordering != Ordering.LESS:
            logger.warning("sorted surplus profile compared %s after %s at iteration=%d", ordering.value, kind.value, iteration)
        h1, h2 = _progress_terms(before, profile, agents)
        recorder.add(
            outer_iteration=iteration,
            kind=kind,
            agent_set=list(agents),
            receiver=target,
            touched=touched,
            entries_before=[float(before_x.values[a, b]) for a, b in touched],
            entries_after=[float(x.values[a, b]) for a, b in touched],
            surplus_before=before.to_list(),
            surplus_after=profile.to_list(),
            floors=floors,
            inner_iterations=inner,
            h1=h1,
            h2=h2,
            progress=ordering,
            acyclicity_attested=True,
        )
        logger.debug("iteration=%d kind=%s max_surplus=%.6g", iteration, kind.value, profile.max_surplus)
        iteration += 1
    else:
        if profile.max_surplus <= constants.stop_threshold:
            status = SolverStatus.CONVERGED

    if status == SolverStatus.CONVERGED and cfg.check_invariants:
        if profile.min_surplus < -inst.epsilon - constants.progress_slack:
            raise InvariantViolation(
                f"converged with a surplus of {profile.min_surplus!r} below -eps"
            )

    original = compute_surplus(inst, x, perturbed.unperturbed())
    acyclic, _ = is_acyclic(build_exchange_graph(x, constants.alpha))
    result = SolverResult(
        n=n,
        x_final=x.to_rows(),
        surplus_perturbed=profile.to_list(),
        surplus_original=original.to_list(),
        status=status,
        outer_iterations=iteration,
        constants=constants,
        certified=Certification(
            reciprocal_3eps=bool(np.max(np.abs(original.delta)) <= 3 * inst.epsilon),
            graph_acyclic=acyclic,
        ),
        trace=recorder.trace if cfg.record_trace else None,
    )
    logger.info(
        "local search finished",
        extra={
            "status": status.value,
            "outer_iterations": iteration,
            "max_abs_surplus_original": float(np.max(np.abs(original.delta))),
        },
    )
    return result
