from __future__ import annotations

import json
from typing import Any

import numpy as np
from pydantic import BaseModel


def _plain(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def canonical_json_bytes(value: BaseModel | dict[str, Any] | list[Any]) -> bytes:
    # float repr is the shortest string that round-trips, so matrices reload bit-identically
    encoded = json.dumps(_plain(value), sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return encoded.encode("utf-8")


def canonical_json_text(value: BaseModel | dict[str, Any] | list[Any]) -> str:
    return canonical_json_bytes(value).decode("utf-8")


def pretty_json_text(value: BaseModel | dict[str, Any] | list[Any]) -> str:
    return json.dumps(_plain(value), sort_keys=True, indent=2, ensure_ascii=True) + "\n"