from __future__ import annotations

import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from shared.constants import DEFAULT_SAMPLES, DEFAULT_SHAPLEY_CAP


class AppConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    threads: int = Field(default=1, ge=0, le=512)
    log_format: Literal["json", "text"] = "json"
    shapley_cap: int = Field(default=DEFAULT_SHAPLEY_CAP, ge=2, le=24)
    default_samples: int = Field(default=DEFAULT_SAMPLES, ge=1)
    check_invariants: bool = True
    debug_recompute: bool = False


def _parse_bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in {"1", "true", "yes", "on"}:
        return True
    if value in {"0", "false", "no", "off"}:
        return False
    raise ValueError(f"invalid boolean: {raw}")


def _env_overrides() -> dict[str, Any]:
    mapping: dict[str, tuple[str, str]] = {
        "FAIRX_THREADS": ("threads", "int"),
        "FAIRX_LOG_FORMAT": ("log_format", "str"),
        "FAIRX_SHAPLEY_CAP": ("shapley_cap", "int"),
        "FAIRX_DEFAULT_SAMPLES": ("default_samples", "int"),
        "FAIRX_CHECK_INVARIANTS": ("check_invariants", "bool"),
        "FAIRX_DEBUG_RECOMPUTE": ("debug_recompute", "bool"),
    }
    out: dict[str, Any] = {}
    for env_name, (field_name, kind) in mapping.items():
        raw = os.getenv(env_name)
        if raw is None:
            continue
        if kind == "int":
            out[field_name] = int(raw)
        elif kind == "bool":
            out[field_name] = _parse_bool(raw)
        else:
            out[field_name] = raw.strip().lower()
    return out


def default_config_toml() -> str:
    return """threads = 1
log_format = \"json\"
shapley_cap = 16
default_samples = 1000
check_invariants = true
debug_recompute = false
"""


def load_config(config_path: Path | None = None) -> AppConfig:
    parsed: dict[str, Any] = {}
    label = "<environment>"
    if config_path is not None:
        path = config_path.expanduser().resolve(strict=False)
        label = str(path)
        try:
            with path.open("rb") as handle:
                parsed = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ValueError(f"invalid config at {path}: {exc}") from exc
    try:
        parsed.update(_env_overrides())
        return AppConfig.model_validate(parsed)
    except (ValidationError, ValueError) as exc:
        raise ValueError(f"invalid config at {label}: {exc}") from exc
