"""Run configuration: YAML documents with a fixed schema per command."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .cir_sim import A3_THRESHOLD, SCHEMES, CirParams
from .levy_models import from_dict

COMMANDS = ("simulate", "density", "estimate", "experiment", "malliavin")
EXPERIMENTS = (
    "continuous-lan",
    "discrete-lan",
    "laq",
    "lamn",
    "v-law",
    "girsanov",
    "ergodic",
    "stable-clt",
)


class ConfigError(ValueError):
    pass


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _one_of(*choices):
    def check(v):
        return v in choices

    check.__doc__ = f"one of {', '.join(map(str, choices))}"
    return check


_pos.__doc__ = "positive"
_nonneg.__doc__ = "nonnegative"

# option name -> (type, default, check); a default of ... marks a required key
OPTIONS: dict[str, dict[str, tuple]] = {
    "simulate": {
        "T": (float, 1.0, _pos),
        "steps": (int, 100, _pos),
        "scheme": (str, "exact", _one_of(*SCHEMES)),
        "jump_timing": (str, "exact", _one_of("exact", "step_end")),
    },
    "density": {
        "t": (float, 0.05, _pos),
        "x": (float, None, _nonneg),
        "y_min": (float, 0.0, _nonneg),
        "y_max": (float, None, _pos),
        "points": (int, 201, _pos),
    },
    "estimate": {
        "observation": (str, "continuous", _one_of("continuous", "discrete")),
        "input": (str, None, None),
        "T": (float, 100.0, _pos),
        "steps": (int, 10_000, _pos),
        "scheme": (str, "euler", _one_of(*SCHEMES)),
        "every": (int, 1, _pos),
        "interval": (list, None, lambda v: len(v) == 2 and v[0] < v[1]),
    },
    "experiment": {
        "name": (str, ..., _one_of(*EXPERIMENTS)),
        "u": (float, 1.0, None),
        "T": (float, 100.0, _pos),
        "steps": (int, 10_000, _pos),
        "n": (int, 2000, _pos),
        "dt": (float, 0.05, _pos),
        "replications": (int, 500, _pos),
        "scheme": (str, "euler", _one_of(*SCHEMES)),
        "limit_replications": (int, 5000, lambda v: v >= 1000),
        "v_horizon": (float, 30.0, _pos),
        "mean_tol": (float, None, _pos),
        "var_tol": (float, 0.15, _pos),
        "ks_alpha": (float, 0.01, lambda v: 0 < v < 1),
        "b_tilde": (float, None, None),
        "horizons": (list, [50.0, 200.0], lambda v: len(v) >= 2 and all(h > 0 for h in v)),
    },
    "malliavin": {
        "mode": (str, "both", _one_of("scan", "ibp", "both")),
        "x": (float, 1.0, _pos),
        "delta": (float, 0.05, _pos),
        "deltas": (list, [0.2, 0.1, 0.05, 0.025], lambda v: len(v) >= 2 and all(d > 0 for d in v)),
        "paths": (int, 100_000, lambda v: v >= 1000),
        "substeps": (int, 16, _pos),
        "f": (str, "exp(-y)", _one_of("exp(-y)", "exp(-2y)", "bump")),
        "method": (str, "exact", _one_of("exact", "explicit")),
    },
}

_PARAM_KEYS = ("a", "b", "sigma", "y0", "m")
_TOP_KEYS = ("command", "seed", "out", "params", "options")


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: CirParams
    options: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "."

    def to_dict(self) -> dict:
        p = self.params
        return {
            "command": self.command,
            "seed": self.seed,
            "out": self.out,
            "params": {"a": p.a, "b": p.b, "sigma": p.sigma, "y0": p.y0, "m": p.m.to_dict()},
            "options": dict(self.options),
        }


def emit_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def _coerce(value: Any, kind: type, where: str):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{where}: must be finite")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return [_coerce(v, float, f"{where}[{i}]") for i, v in enumerate(value)]
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _unknown(keys, allowed, where: str):
    extra = [k for k in keys if k not in allowed]
    if extra:
        raise ConfigError(f"{where}: unknown key {extra[0]!r} (allowed: {', '.join(allowed)})")


def _params(raw: Any) -> CirParams:
    if not isinstance(raw, dict):
        raise ConfigError("params: expected a mapping")
    _unknown(raw, _PARAM_KEYS, "params")
    vals = {}
    for key in ("a", "b", "sigma", "y0"):
        if key not in raw:
            raise ConfigError(f"params: missing required key {key!r}")
        vals[key] = _coerce(raw[key], float, f"params.{key}")
    m_raw = raw.get("m", {"kind": "Zero"})
    if not isinstance(m_raw, dict):
        raise ConfigError("params.m: expected a {kind, parameters} mapping")
    try:
        m = from_dict(m_raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"params.m: {exc}") from exc
    try:
        return CirParams(vals["a"], vals["b"], vals["sigma"], vals["y0"], m)
    except ValueError as exc:
        raise ConfigError(f"params: {exc}") from exc


def _needs_a3(command: str, options: dict) -> bool:
    if command == "experiment":
        return options["name"] == "discrete-lan"
    if command == "estimate":
        return options["observation"] == "discrete"
    return command == "malliavin" and options["mode"] in ("scan", "both")


def parse_config(text: str, allow_outside_a3: bool = False, command: Optional[str] = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    ``command`` (from the command line) fills in a missing ``command`` key and
    must agree with it when both are present.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    _unknown(raw, _TOP_KEYS, "top level")
    if command is not None and raw.get("command", command) != command:
        raise ConfigError(f"command: config says {raw['command']!r} but {command!r} was requested")
    command = raw.get("command", command)
    if command not in COMMANDS:
        raise ConfigError(f"command: expected one of {', '.join(COMMANDS)}, got {command!r}")
    if "params" not in raw:
        raise ConfigError("top level: missing required key 'params'")
    params = _params(raw["params"])
    seed = _coerce(raw.get("seed", 0), int, "seed")
    if not 0 <= seed < 2**64:
        raise ConfigError("seed: must lie in [0, 2^64)")
    out = _coerce(raw.get("out", "."), str, "out")

    raw_opts = raw.get("options") or {}
    if not isinstance(raw_opts, dict):
        raise ConfigError("options: expected a mapping")
    schema = OPTIONS[command]
    _unknown(raw_opts, schema, f"options ({command})")
    options = {}
    for key, (kind, default, check) in schema.items():
        where = f"options.{key}"
        if key not in raw_opts or raw_opts[key] is None:
            if default is ...:
                raise ConfigError(f"{where}: required for command {command!r}")
            options[key] = default
            continue
        val = _coerce(raw_opts[key], kind, where)
        if check is not None and not check(val):
            raise ConfigError(f"{where}: value {val!r} out of range ({check.__doc__ or 'invalid'})")
        options[key] = val

    if _needs_a3(command, options) and not params.satisfies_a3() and not allow_outside_a3:
        raise ConfigError(
            f"params: a/sigma^2 = {params.a_ratio:.6g} does not exceed {A3_THRESHOLD:.6g}; "
            "pass --allow-outside-a3 to run anyway"
        )
    return RunConfig(command, params, options, seed, out)
