"""Flat dotted-key configuration for the CLI and a parameter digest.

A config file is a single JSON object whose keys look like "flock.v_max"
or "ares.h_max". Unknown keys are rejected. Precedence: built-in defaults,
then file values, then explicit overrides (CLI flags / --set pairs).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any, Callable, Optional

from .engine import AresParams
from .flock import FlockParams
from .harness import EvalParams
from .pso import PsoParams


class ConfigError(ValueError):
    """Unknown key, unparseable value, or parameter validation failure."""


def _to_bool(raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, str):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _to_int(raw: Any) -> int:
    if isinstance(raw, bool):
        raise ConfigError(f"expected an integer, got {raw!r}")
    try:
        as_float = float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected an integer, got {raw!r}") from exc
    value = int(as_float)
    if value != as_float:
        raise ConfigError(f"expected an integer, got {raw!r}")
    return value


def _to_float(raw: Any) -> float:
    if isinstance(raw, bool):
        raise ConfigError(f"expected a number, got {raw!r}")
    try:
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"expected a number, got {raw!r}") from exc


def _to_optional_int(raw: Any) -> Optional[int]:
    if raw is None:
        return None
    if isinstance(raw, str) and raw.strip().lower() in ("none", "null"):
        return None
    return _to_int(raw)


def _to_optional_float(raw: Any) -> Optional[float]:
    if raw is None:
        return None
    if isinstance(raw, str) and raw.strip().lower() in ("none", "null"):
        return None
    return _to_float(raw)


# key -> (group, field, converter). Group "eval" lands on EvalParams itself.
_SCHEMA: dict[str, tuple[str, str, Callable[[Any], Any]]] = {}


def _register(group: str, cls, skip: tuple[str, ...] = ()) -> None:
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        if f.type in ("int", int):
            conv = _to_int
        elif f.type in ("float", float):
            conv = _to_float
        elif f.type in ("bool", bool):
            conv = _to_bool
        elif f.name == "n":
            conv = _to_optional_int
        elif f.name == "budget_s":
            conv = _to_optional_float
        else:
            continue
        _SCHEMA[f"{group}.{f.name}"] = (group, f.name, conv)


_register("flock", FlockParams)
_register("ares", AresParams)
# The particle count p is owned by the planner's schedule (ares.p_start ..
# ares.p_max), so it is not a config key.
_register("pso", PsoParams, skip=("p",))
_register("eval", EvalParams, skip=("flock", "ares", "pso"))


def known_keys() -> tuple[str, ...]:
    return tuple(sorted(_SCHEMA))


def parse_value(key: str, raw: Any) -> Any:
    if key not in _SCHEMA:
        raise ConfigError(
            f"unknown config key {key!r} (known keys: {', '.join(known_keys())})"
        )
    _, _, conv = _SCHEMA[key]
    return conv(raw)


def load_config_file(path: str) -> dict[str, Any]:
    """Read a flat dotted-key JSON object; values are parsed and validated."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return {key: parse_value(key, raw) for key, raw in doc.items()}


def build_eval_params(*value_layers: dict[str, Any]) -> EvalParams:
    """Merge key/value layers (later wins) over the defaults and construct
    the full parameter set. Validation errors surface as ConfigError."""
    merged: dict[str, Any] = {}
    for layer in value_layers:
        for key, value in layer.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
    groups: dict[str, dict[str, Any]] = {"flock": {}, "ares": {}, "pso": {}, "eval": {}}
    for key, value in merged.items():
        group, name, _ = _SCHEMA[key]
        groups[group][name] = value
    try:
        return EvalParams(
            flock=FlockParams(**groups["flock"]),
            ares=AresParams(**groups["ares"]),
            pso=PsoParams(**groups["pso"]),
            **groups["eval"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def params_digest(flock: FlockParams, ares: AresParams, pso: PsoParams) -> str:
    """16-hex-digit digest of every physics/planner/optimizer parameter;
    embedded in plan files so replay refuses incompatible configs."""
    doc = {
        "flock": dataclasses.asdict(flock),
        "ares": dataclasses.asdict(ares),
        "pso": dataclasses.asdict(pso),
    }
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("ascii")).hexdigest()[:16]
