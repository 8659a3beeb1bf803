"""Numeric tolerances and caps shared by the engine and the CLI."""

INSTANCE_SCHEMA_VERSION = 1
DEFAULT_SHAPLEY_CAP = 16
DEFAULT_SAMPLES = 1000
MAX_BRUTEFORCE_AGENTS = 20
EFFICIENCY_TOLERANCE = 1e-9
MONOTONICITY_TOLERANCE = 1e-9
RECOMPUTE_TOLERANCE = 1e-9
REVERSAL_TOLERANCE = 1e-7
ZERO_SUM_TOLERANCE = 1e-8
FINITE_DIFFERENCE_STEP = 1e-3
SHARE_CACHE_MAX_ENTRIES = 4096
SAMPLED_PERMUTATION_BLOCK = 256
