from __future__ import annotations

import csv
import json
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from core.models import ExchangeMatrix, SolverTrace, StepRecord
from core.solver import SolverResult, potential_exact
from core.verify import VerificationReport, profile_from_surplus
from fairx.instances import format_validation_error, load_json
from shared.enums import StepKind
from shared.errors import InstanceError, TraceFormatError
from shared.serialization import canonical_json_text, pretty_json_text


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def write_result(result: SolverResult, path: Path) -> None:
    _write(path, pretty_json_text(result.model_dump(mode="json", exclude={"trace"})))


def load_result(path: Path) -> SolverResult:
    try:
        return SolverResult.model_validate(load_json(path))
    except ValidationError as exc:
        raise InstanceError(f"{path}: {format_validation_error(exc)}") from exc


def write_trace(trace: SolverTrace, path: Path) -> None:
    lines = [canonical_json_text(trace.header())]
    lines.extend(canonical_json_text(step) for step in trace.steps)
    _write(path, "\n".join(lines) + "\n")


def load_trace(path: Path) -> SolverTrace:
    """Header object on the first line, then one step per line."""
    try:
        raw_lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TraceFormatError(f"{path}: cannot read trace: {exc.strerror}") from exc
    records: list[Any] = []
    for number, line in enumerate(raw_lines, start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}: line {number}: {exc.msg}") from exc
    if not records:
        raise TraceFormatError(f"{path}: empty trace")
    try:
        trace = SolverTrace.model_validate({**records[0], "steps": []})
        trace.steps.extend(StepRecord.model_validate(record) for record in records[1:])
    except ValidationError as exc:
        raise TraceFormatError(f"{path}: {format_validation_error(exc)}") from exc
    return trace


def _format_potential(potential: Fraction) -> str:
    try:
        return repr(float(potential))
    except OverflowError:
        return str(potential)


def trajectory_rows(trace: SolverTrace) -> list[list[str]]:
    constants = trace.constants
    snapshots = [trace.initial_surplus]
    snapshots.extend(step.surplus_after for step in trace.steps if step.kind != StepKind.SELECT_S)
    rows = []
    for index, surplus in enumerate(snapshots):
        profile = profile_from_surplus(surplus)
        potential = potential_exact(profile, constants.epsilon, constants.lipschitz)
        rows.append(
            [str(index)]
            + [repr(float(value)) for value in profile.sorted_values]
            + [_format_potential(potential)]
        )
    return rows


def write_trajectory_csv(trace: SolverTrace, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["step"] + [f"rank_{k}" for k in range(1, trace.n + 1)] + ["potential"])
        writer.writerows(trajectory_rows(trace))


def load_exchange(path: Path) -> ExchangeMatrix:
    """Accepts a bare {"n", "x"} exchange file or a solver result carrying x_final."""
    payload = load_json(path)
    if not isinstance(payload, dict):
        raise InstanceError(f"{path}: exchange file must hold a JSON object")
    rows = payload.get("x", payload.get("x_final"))
    if rows is None:
        raise InstanceError(f"{path}: field x: missing")
    n = payload.get("n")
    try:
        matrix = ExchangeMatrix.from_rows(rows)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{path}: field x: {exc}") from exc
    if n is not None and n != matrix.n:
        raise InstanceError(f"{path}: field n: declares {n} agents but x is {matrix.n}x{matrix.n}")
    return matrix


def write_exchange(x: ExchangeMatrix, path: Path) -> None:
    _write(path, pretty_json_text({"n": x.n, "x": x.to_rows()}))


def write_report(report: VerificationReport, path: Path) -> None:
    payload = report.model_dump(mode="json")
    payload["passed"] = report.passed
    _write(path, pretty_json_text(payload))


def share_table(shares: np.ndarray, residuals: list[float]) -> list[list[str]]:
    n = shares.shape[0]
    rows = [["donor"] + [f"receiver_{j}" for j in range(n)]]
    rows.extend([str(i)] + [repr(float(value)) for value in shares[i]] for i in range(n))
    rows.append(["efficiency_residual"] + [repr(float(value)) for value in residuals])
    return rows


def write_share_table(shares: np.ndarray, residuals: list[float], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        csv.writer(handle).writerows(share_table(shares, residuals))
