"""INI run configuration.

Grammar: standard ``configparser`` files (``key = value`` lines under
``[section]`` headers, ``#`` or ``;`` comments (also after a value), no interpolation, keys are
case-sensitive). Sections and their keys are the fields of:

    [experiment]   ExperimentConfig scalars (seed, K, n_atom, n_b, rounds, ...)
    [barycenter]   BarycenterConfig without its solver
    [solver]       SolverConfig of the barycenter and loss OT problems
    [data]         kind = synthetic | csv, path, domain_column, label_column, target_domain
    [synthetic]    SyntheticBenchmarkSpec
    [classifier]   ClassifierConfig

Values: integers and floats in Python syntax, booleans as true/false (also
yes/no, on/off, 1/0), ``none`` for optional values, tuples as comma-separated
numbers, and ``translations`` as semicolon-separated vectors. Every section
and key is optional; anything not listed above is an error naming the key.
"""
from __future__ import annotations

import configparser
import dataclasses
import typing
from pathlib import Path

from .adaptation import ClassifierConfig
from .barycenter import BarycenterConfig
from .data import SyntheticBenchmarkSpec
from .experiment import DataSource, ExperimentConfig
from .ot import SolverConfig


class ConfigError(ValueError):
    pass


_NESTED = ("barycenter", "data", "synthetic", "classifier")
_SECTIONS = {
    "experiment": ExperimentConfig,
    "barycenter": BarycenterConfig,
    "solver": SolverConfig,
    "data": DataSource,
    "synthetic": SyntheticBenchmarkSpec,
    "classifier": ClassifierConfig,
}
_SKIP = {"experiment": set(_NESTED), "barycenter": {"inner_solver", "beta"}}  # beta: [experiment]
_BOOLS = {"true": True, "yes": True, "on": True, "1": True,
          "false": False, "no": False, "off": False, "0": False}


def _fields(section: str) -> dict[str, str]:
    cls = _SECTIONS[section]
    hints = typing.get_type_hints(cls)
    return {f.name: str(hints[f.name]).replace("typing.", "")
            for f in dataclasses.fields(cls) if f.name not in _SKIP.get(section, ())}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _parse(hint: str, text: str):
    text = text.strip()
    optional = "None" in hint
    if optional and text.lower() == "none":
        return None
    base = hint.replace(" | None", "").replace("Optional[", "").rstrip("]") if optional else hint
    if "tuple[tuple" in base:
        return tuple(_floats(v) for v in text.split(";") if v.strip())
    if "tuple" in base and "float" in base and "|" in base:  # tuple or scalar
        return _floats(text) if "," in text else float(text)
    if "tuple" in base:
        return _floats(text)
    if "bool" in base:
        if text.lower() not in _BOOLS:
            raise ValueError(f"not a boolean: {text!r}")
        return _BOOLS[text.lower()]
    if "int" in base:
        return int(text)
    if "float" in base:
        return float(text)
    return text


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_format(v) for v in value)
        return ", ".join(repr(float(v)) for v in value) + ("," if len(value) == 1 else "")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build an ExperimentConfig from INI text; ``overrides`` go into [experiment]."""
    cp = configparser.ConfigParser(interpolation=None, default_section="\0defaults",
                                   inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values: dict[str, dict] = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}] (known: {', '.join(_SECTIONS)})")
        known = _fields(section)
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            try:
                values[section][key] = _parse(known[key], raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r} in [{section}]: {exc}") from None
    for key, v in (overrides or {}).items():
        values.setdefault("experiment", {})[key] = v

    def build(section, **extra):
        try:
            return _SECTIONS[section](**values.get(section, {}), **extra)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None

    barycenter = build("barycenter", inner_solver=build("solver"))
    return build("experiment", barycenter=barycenter, data=build("data"),
                 synthetic=build("synthetic"), classifier=build("classifier"))


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg``."""
    objs = {
        "experiment": cfg,
        "barycenter": cfg.barycenter,
        "solver": cfg.barycenter.inner_solver,
        "data": cfg.data,
        "synthetic": cfg.synthetic,
        "classifier": cfg.classifier,
    }
    lines = []
    for section, obj in objs.items():
        lines.append(f"[{section}]")
        for name in _fields(section):
            lines.append(f"{name} = {_format(getattr(obj, name))}")
        lines.append("")
    return "\n".join(lines)
