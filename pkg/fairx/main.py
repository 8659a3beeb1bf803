from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import NoReturn

import numpy as np

from core.models import Instance, ShareRule
from core.parallel import resolve_workers
from core.shares import ShareOracle
from core.solver import SolverConfig, run_local_search
from core.verify import build_report
from fairx.config import AppConfig, load_config
from fairx.instances import (
    InstanceFile,
    build_instance,
    generate_instance,
    instance_text,
    load_instance_file,
    write_instance_file,
)
from fairx.logging import configure_logging
from fairx.reports import (
    load_exchange,
    load_trace,
    share_table,
    write_report,
    write_result,
    write_share_table,
    write_trace,
    write_trajectory_csv,
)
from shared.enums import ShareRuleKind, SolverStatus, UtilityFamily
from shared.errors import InstanceError, PreconditionError, TraceFormatError
from shared.telemetry import write_metrics

logger = logging.getLogger("fairx.cli")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_NOT_CONVERGED = 2
EXIT_INPUT_ERROR = 3

SHARE_RULE_FLAGS = {
    "shapley": ShareRuleKind.SHAPLEY_EXACT,
    "shapley-sampled": ShareRuleKind.SHAPLEY_SAMPLED,
    "proportional": ShareRuleKind.PROPORTIONAL,
}


def _share_rule(source: InstanceFile, args: argparse.Namespace, config: AppConfig) -> ShareRule | None:
    flag = getattr(args, "share_rule", None)
    samples = getattr(args, "samples", None)
    if flag is None and samples is None:
        return None
    kind = SHARE_RULE_FLAGS[flag] if flag is not None else source.share_rule.kind
    updates: dict[str, object] = {"kind": kind}
    if kind == ShareRuleKind.SHAPLEY_SAMPLED:
        if samples is not None:
            updates["samples"] = samples
        elif source.share_rule.kind != ShareRuleKind.SHAPLEY_SAMPLED:
            updates["samples"] = config.default_samples
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return source.share_rule.model_copy(update=updates)


def _load_instance(args: argparse.Namespace, config: AppConfig, override_epsilon: bool) -> Instance:
    path = Path(args.instance)
    source = load_instance_file(path)
    source = source.with_overrides(
        epsilon=args.epsilon if override_epsilon else None,
        share_rule=_share_rule(source, args, config),
    )
    return build_instance(source, str(path))


def _emit(payload: dict[str, object]) -> None:
    print(json.dumps(payload, ensure_ascii=True, sort_keys=True))


def cmd_gen(args: argparse.Namespace, config: AppConfig) -> int:
    del config
    source = generate_instance(args.n, args.family, args.epsilon, args.seed)
    if args.out:
        write_instance_file(source, Path(args.out))
        logger.info("wrote %s instance with n=%d to %s", args.family, args.n, args.out)
    else:
        sys.stdout.write(instance_text(source))
    return EXIT_OK


def cmd_solve(args: argparse.Namespace, config: AppConfig) -> int:
    path = Path(args.instance)
    inst = _load_instance(args, config, override_epsilon=True)
    solver_cfg = SolverConfig.for_instance(
        inst,
        max_outer_iters=args.max_iters,
        record_trace=bool(args.trace or args.csv or args.verify),
        seed=args.seed,
        allow_noncrossmonotone=args.allow_noncrossmonotone,
        check_invariants=config.check_invariants,
        debug_recompute=config.debug_recompute,
        shapley_cap=config.shapley_cap,
        workers=resolve_workers(config.threads),
    )
    result = run_local_search(inst, solver_cfg)

    out = Path(args.out) if args.out else path.with_suffix(".result.json")
    write_result(result, out)
    if result.trace is not None and args.trace:
        write_trace(result.trace, Path(args.trace))
    if result.trace is not None and args.csv:
        write_trajectory_csv(result.trace, Path(args.csv))

    full_sharing = inst.full_sharing_utilities()
    _emit(
        {
            "status": result.status.value,
            "outer_iterations": result.outer_iterations,
            "max_abs_surplus_original": max(abs(value) for value in result.surplus_original),
            "reciprocal_3eps": result.certified.reciprocal_3eps,
            "graph_acyclic": result.certified.graph_acyclic,
            "max_full_sharing_utility": max(full_sharing),
            "full_sharing_bound": inst.n * inst.lipschitz,
            "result": str(out),
        }
    )

    code = EXIT_OK
    if args.verify:
        report = build_report(
            inst,
            result.exchange(),
            3 * inst.epsilon,
            trace=result.trace,
            workers=solver_cfg.workers,
        )
        write_report(report, out.with_suffix(".report.json"))
        if not report.passed:
            code = EXIT_VERIFY_FAILED
    if args.metrics:
        write_metrics(Path(args.metrics))
    if result.status != SolverStatus.CONVERGED:
        logger.warning("solver stopped before converging after max_outer_iters=%d", result.constants.max_outer_iters)
        return EXIT_NOT_CONVERGED
    return code


def cmd_verify(args: argparse.Namespace, config: AppConfig) -> int:
    inst = _load_instance(args, config, override_epsilon=False)
    x = load_exchange(Path(args.exchange))
    if x.n != inst.n:
        raise InstanceError(f"{args.exchange}: exchange covers {x.n} agents but the instance has {inst.n}")
    threshold = args.epsilon if args.epsilon is not None else 3 * inst.epsilon
    trace = load_trace(Path(args.trace)) if args.trace else None
    workers = resolve_workers(config.threads)
    report = build_report(
        inst,
        x,
        threshold,
        trace=trace,
        audit_trials=args.audit,
        seed=args.seed or 0,
        workers=workers,
        oracle=ShareOracle.for_instance(inst, cap=config.shapley_cap, workers=workers),
    )
    if args.out:
        write_report(report, Path(args.out))
    _emit(
        {
            "passed": report.passed,
            "epsilon": threshold,
            "reciprocal_at": report.reciprocal_at,
            "core_stable_at": report.core_stable_at,
            "blocking_coalition": report.blocking_witness.coalition if report.blocking_witness else None,
            "trace_ok": report.trace_ok,
        }
    )
    if args.metrics:
        write_metrics(Path(args.metrics))
    return EXIT_OK if report.passed else EXIT_VERIFY_FAILED


def cmd_shapley(args: argparse.Namespace, config: AppConfig) -> int:
    if args.sampled is not None:
        args.share_rule = "shapley-sampled"
        args.samples = args.sampled
    inst = _load_instance(args, config, override_epsilon=False)
    x = load_exchange(Path(args.exchange))
    if x.n != inst.n:
        raise InstanceError(f"{args.exchange}: exchange covers {x.n} agents but the instance has {inst.n}")
    oracle = ShareOracle.for_instance(inst, cap=config.shapley_cap, workers=resolve_workers(config.threads))
    shares = np.zeros((inst.n, inst.n), dtype=float)
    residuals: list[float] = []
    for j, spec in enumerate(inst.utilities):
        column = oracle.column_shares(spec, x.bundle(j), j)
        shares[:, j] = column
        residuals.append(abs(float(column.sum()) - oracle.utility_value(spec, x.bundle(j))))
    if args.out:
        write_share_table(shares, residuals, Path(args.out))
    else:
        csv.writer(sys.stdout).writerows(share_table(shares, residuals))
    return EXIT_OK


class ArgumentParser(argparse.ArgumentParser):
    # exit status 2 is reserved for non-convergence
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT_ERROR, f"{self.prog}: error: {message}\n")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="path to config.toml")
    parser.add_argument("--verbose", action="store_true")


def _add_instance_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="seed for sampled shares")
    parser.add_argument("--share-rule", choices=sorted(SHARE_RULE_FLAGS), default=None)
    parser.add_argument("--samples", type=int, default=None, help="permutations per sampled column")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="fairx")
    subparsers = parser.add_subparsers(dest="command", required=True)

    gen_parser = subparsers.add_parser("gen", help="generate a random instance file")
    gen_parser.add_argument("--n", type=int, required=True, help="number of agents")
    gen_parser.add_argument("--family", choices=[family.value for family in UtilityFamily], required=True)
    gen_parser.add_argument("--epsilon", type=float, default=0.1)
    gen_parser.add_argument("--seed", type=int, default=0)
    gen_parser.add_argument("--out", type=str, default=None, help="write here instead of stdout")
    _add_common(gen_parser)
    gen_parser.set_defaults(func=cmd_gen)

    solve_parser = subparsers.add_parser("solve", help="run the local search on an instance")
    solve_parser.add_argument("instance", type=str)
    solve_parser.add_argument("--epsilon", type=float, default=None, help="override the instance epsilon")
    _add_instance_flags(solve_parser)
    solve_parser.add_argument("--max-iters", type=int, default=None)
    solve_parser.add_argument("--trace", type=str, default=None, help="write the step trace as JSONL")
    solve_parser.add_argument("--csv", type=str, default=None, help="write the surplus trajectory as CSV")
    solve_parser.add_argument("--allow-noncrossmonotone", action="store_true")
    solve_parser.add_argument("--out", type=str, default=None, help="result JSON path")
    solve_parser.add_argument("--verify", action="store_true", help="certify the result at 3*epsilon")
    solve_parser.add_argument("--metrics", type=str, default=None, help="prometheus textfile path")
    _add_common(solve_parser)
    solve_parser.set_defaults(func=cmd_solve)

    verify_parser = subparsers.add_parser("verify", help="certify an exchange against an instance")
    verify_parser.add_argument("instance", type=str)
    verify_parser.add_argument("exchange", type=str, help="exchange file or solver result JSON")
    verify_parser.add_argument("--epsilon", type=float, default=None, help="threshold, default 3*epsilon")
    _add_instance_flags(verify_parser)
    verify_parser.add_argument("--trace", type=str, default=None, help="replay this JSONL trace")
    verify_parser.add_argument("--audit", type=int, default=0, help="random share-axiom trials")
    verify_parser.add_argument("--out", type=str, default=None, help="report JSON path")
    verify_parser.add_argument("--metrics", type=str, default=None, help="prometheus textfile path")
    _add_common(verify_parser)
    verify_parser.set_defaults(func=cmd_verify)

    shapley_parser = subparsers.add_parser("shapley", help="print the share table of an exchange")
    shapley_parser.add_argument("instance", type=str)
    shapley_parser.add_argument("exchange", type=str)
    _add_instance_flags(shapley_parser)
    shapley_parser.add_argument("--sampled", type=int, default=None, help="use m sampled permutations")
    shapley_parser.add_argument("--out", type=str, default=None, help="write the table as CSV")
    _add_common(shapley_parser)
    shapley_parser.set_defaults(func=cmd_shapley)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(Path(args.config) if args.config else None)
    except ValueError as exc:
        configure_logging(bool(args.verbose))
        logger.error("config rejected: %s", exc)
        return EXIT_INPUT_ERROR
    configure_logging(bool(args.verbose), config.log_format)
    try:
        return int(args.func(args, config))
    except (InstanceError, PreconditionError, TraceFormatError) as exc:
        logger.error("input rejected: %s", exc)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
