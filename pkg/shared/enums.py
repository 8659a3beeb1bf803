from __future__ import annotations

from enum import Enum


class UtilityFamily(str, Enum):
    ADDITIVE = "additive"
    CONCAVE_OF_SUM = "concave_of_sum"
    COVERAGE = "coverage"


class ShareRuleKind(str, Enum):
    SHAPLEY_EXACT = "shapley_exact"
    SHAPLEY_SAMPLED = "shapley_sampled"
    PROPORTIONAL = "proportional"


class StepKind(str, Enum):
    SELECT_S = "select_s"
    DECREASE_FLOW = "decrease_flow"
    INCREASE_FLOW = "increase_flow"


class SolverStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS_EXCEEDED = "max_iters_exceeded"


class Ordering(str, Enum):
    LESS = "less"
    EQUAL = "equal"
    GREATER = "greater"
