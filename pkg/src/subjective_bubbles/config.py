"""Scenario configuration files.

A configuration is a TOML document of ``key = value`` lines, optionally
grouped under ``[section]`` headers.  Sections are only for readability: all
keys are flattened into one namespace, so ``[grid] n_steps = 500`` and a
top-level ``n_steps = 500`` mean the same thing.  Strings are quoted,
numbers are not, vectors are arrays::

    scenario = "optimist"

    [economy]
    D0 = 2.0
    v = 0.2

    [agents]
    w = [1.0, 1.0]

Unknown keys, repeated keys and constraint violations are rejected with the
offending field and its line number.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ValidationError
from .scenarios import SCENARIOS, ScenarioConfig, default_config
from .solver import AgentSpec, Utility

_ALIASES = {"D_0": "D0", "psi_0": "psi0", "base_seed": "seed"}

_SCALARS = {
    "D0": float,
    "a": float,
    "kappa": float,
    "psi0": float,
    "rho": float,
    "T": float,
    "t_star": float,
    "n_steps": int,
    "n_paths": int,
    "seed": int,
    "chunk_size": int,
    "workers": int,
    "lattice_steps": int,
    "law_paths": int,
}
_VECTORS = ("v", "v_psi", "w", "checkpoints")
_KNOWN = set(_SCALARS) | set(_VECTORS) | {"scenario", "bridge", "utility"}


def _key_lines(text: str) -> dict[str, int]:
    """First line number of each bare ``key =`` in the text."""
    lines = {}
    for i, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([^\s=\[#\"']+)\s*=", line)
        if m:
            lines.setdefault(m.group(1), i)
    return lines


def _where(key: str, lines: dict[str, int]) -> str:
    return f" (line {lines[key]})" if key in lines else ""


def _flatten(doc: dict, lines: dict[str, int]) -> dict:
    flat: dict = {}

    def visit(table: dict, prefix: str):
        for key, value in table.items():
            if isinstance(value, dict):
                visit(value, f"{prefix}{key}.")
                continue
            name = _ALIASES.get(key, key)
            if name in flat:
                raise ValidationError(f"field {name!r} given more than once{_where(key, lines)}", name)
            if name not in _KNOWN:
                raise ValidationError(f"unknown field {prefix}{key!r}{_where(key, lines)}", key)
            flat[name] = (value, key)

    visit(doc, "")
    return flat


def _convert(name: str, raw, key: str, lines: dict[str, int]):
    where = _where(key, lines)
    if name == "scenario":
        if not isinstance(raw, str):
            raise ValidationError(f"field 'scenario' must be a quoted string{where}", name)
        return raw
    if name == "bridge":
        if not isinstance(raw, bool):
            raise ValidationError(f"field 'bridge' must be true or false{where}", name)
        return raw
    if name == "utility":
        items = raw if isinstance(raw, list) else [raw]
        out = []
        for item in items:
            if item == "log":
                out.append(Utility.log())
            elif isinstance(item, (int, float)) and not isinstance(item, bool):
                out.append(Utility.power(item))
            else:
                raise ValidationError(f"field 'utility' entries must be \"log\" or a risk aversion number{where}", name)
        return out
    if name in _VECTORS:
        items = raw if isinstance(raw, list) else [raw]
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in items):
            raise ValidationError(f"field {name!r} must be a number or an array of numbers{where}", name)
        return tuple(float(x) for x in items)
    kind = _SCALARS[name]
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ValidationError(f"field {name!r} must be an unquoted number{where}", name)
    if kind is int:
        if isinstance(raw, float) and not raw.is_integer():
            raise ValidationError(f"field {name!r} must be an integer{where}", name)
        return int(raw)
    return float(raw)


def config_from_mapping(values: dict, lines: dict[str, int] | None = None) -> ScenarioConfig:
    """Build a validated config from flat ``name -> value`` pairs, filling scenario defaults."""
    lines = lines or {}
    values = dict(values)
    scenario = values.pop("scenario", "optimist")
    if scenario not in SCENARIOS:
        raise ValidationError(
            f"unknown scenario {scenario!r}{_where('scenario', lines)}; expected one of {', '.join(SCENARIOS)}",
            "scenario",
        )
    w = values.pop("w", (1.0, 1.0))
    utilities = values.pop("utility", None)
    if utilities is None:
        utilities = [Utility.log() for _ in w]
    elif len(utilities) == 1:
        utilities = utilities * len(w)
    if len(utilities) != len(w):
        raise ValidationError(f"field 'utility' needs one entry per agent{_where('utility', lines)}", "utility")
    try:
        values["agents"] = tuple(AgentSpec(float(wk), u) for wk, u in zip(w, utilities))
        return default_config(scenario, **values)
    except ValidationError as exc:
        field = exc.field
        key = next((k for k, v in _ALIASES.items() if v == field and k in lines), field)
        where = _where(key, lines) if key else ""
        raise ValidationError(f"{exc}{where}", field) from None


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    lines = _key_lines(text)
    flat = _flatten(doc, lines)
    values = {name: _convert(name, raw, key, lines) for name, (raw, key) in flat.items()}
    return config_from_mapping(values, {_ALIASES.get(k, k): n for k, n in lines.items()})


def parse_config(path) -> ScenarioConfig:
    """Read and validate a configuration file.

    Missing fields take the scenario defaults (``n_steps = 2000``,
    ``n_paths = 100000``, ``rho = 0.05``, ``T = 1`` and the scenario's own
    ``D0`` and ``v``).  A missing ``scenario`` means ``"optimist"``.

    Raises
    ------
    ValidationError
        On a parse error, an unknown field, or a violated constraint.  The
        message names the field and, where known, its line.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def format_config(cfg: ScenarioConfig) -> str:
    """Render a config in the file format; ``parse_config_text`` reads it back unchanged."""
    d = cfg.as_dict()
    d["workers"] = cfg.workers
    out = []
    for key, value in d.items():
        out.append(f"{key} = {_toml_value(value)}")
    return "\n".join(out) + "\n"


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in value) + "]"
    raise TypeError(f"cannot render {type(value).__name__}")
