"""Typed INI-style experiment configuration.

Every section and key is declared in :data:`SCHEMA`; anything else is
rejected before work starts. Values are parsed by type: ``int``, ``float``,
``str``, ``bool`` and comma-separated ``list[...]`` forms.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .data import FauxSpec
from .numerics import ConfigurationError
from .trainer import TrainConfig


def _faux_fields() -> dict:
    types = {"variables": "dict", "sparse_variables": "list[str]"}
    out = {}
    for f in dataclasses.fields(FauxSpec):
        out[f.name] = types.get(f.name, {int: "int", float: "float", str: "str"}.get(type(f.default), None)
                                if f.default is not dataclasses.MISSING else "dict")
    return out


def _train_fields() -> dict:
    out = {}
    for f in dataclasses.fields(TrainConfig):
        d = f.default
        out[f.name] = "list[int]" if isinstance(d, tuple) else {int: "int", float: "float", str: "str"}[type(d)]
    return out


SCHEMA = {
    "run": {"seed": "int", "out": "str", "preset": "str"},
    "data": {"profiles": "str", "metadata": "str", "context_columns": "list[str]"},
    "faux": _faux_fields(),
    "train": _train_fields(),
    "metrics": {"bandwidth": "str", "bmse_mode": "str", "freq_percentile": "float",
                "cluster_fraction": "float", "k": "int", "sparsity_seed": "int"},
    "generate": {"n": "int", "all_train_contexts": "bool", "contexts": "str"},
    "ablation": {"lambdas": "list[float]", "seeds": "list[int]"},
    "extrapolate": {"target": "str", "yes": "str", "no": "str", "match_columns": "list[str]",
                    "n_samples": "int", "n_combos": "int"},
}

DEFAULTS = {
    "run": {"seed": 0, "out": "out", "preset": "desk"},
    "data": {"profiles": "", "metadata": "", "context_columns": []},
    "faux": {},
    "train": {},
    "metrics": {"bandwidth": "median", "bmse_mode": "outside_only", "freq_percentile": 0.90,
                "cluster_fraction": 0.10, "k": 10, "sparsity_seed": 0},
    "generate": {"n": 1, "all_train_contexts": False, "contexts": ""},
    "ablation": {"lambdas": [0.0, 0.1], "seeds": [0, 1, 2, 3, 4]},
    "extrapolate": {"target": "pv", "yes": "yes", "no": "no", "match_columns": ["location", "building_type"],
                    "n_samples": 20, "n_combos": 50},
}


def parse_value(kind: str, text: str, where: str):
    text = text.strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "str":
            return text
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind.startswith("list["):
            inner = kind[5:-1]
            return [parse_value(inner, part, where) for part in text.split(",") if part.strip()]
        if kind == "dict":
            # name:int pairs, e.g. "location:4, pv:2"
            out = {}
            for part in text.split(","):
                if part.strip():
                    k, v = part.split(":")
                    out[k.strip()] = int(v)
            return out
    except ValueError:
        raise ConfigurationError(f"{where}: cannot parse {text!r} as {kind}") from None
    raise ConfigurationError(f"{where}: unsupported type {kind}")


def default_config() -> dict:
    return {s: dict(v) for s, v in DEFAULTS.items()}


def load_config(path=None, text: str | None = None) -> dict:
    """Parse and validate a config file; returns ``{section: {key: value}}`` merged over defaults."""
    cfg = default_config()
    if path is None and text is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    source = str(path) if path is not None else "<config>"
    try:
        if text is None:
            text = Path(path).read_text()
        parser.read_string(text, source=source)
    except (OSError, configparser.Error) as err:
        raise ConfigurationError(f"{source}: {err}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
            cfg[section][key] = parse_value(SCHEMA[section][key], raw, f"{source} [{section}] {key}")
    return cfg


def faux_spec_from(cfg: dict) -> FauxSpec:
    values = dict(cfg.get("faux", {}))
    if "sparse_variables" in values:
        values["sparse_variables"] = tuple(values["sparse_variables"])
    spec = FauxSpec(**values)
    spec.validate()
    return spec


def train_config_from(cfg: dict, preset: str | None = None, **overrides) -> TrainConfig:
    from .trainer import preset_config

    preset = preset or cfg["run"]["preset"]
    values = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.get("train", {}).items()}
    values.pop("preset", None)
    values.update({k: v for k, v in overrides.items() if v is not None})
    values.setdefault("seed", cfg["run"]["seed"])
    return preset_config(preset, **values)


def schema_text() -> str:
    """Human-readable schema listing for ``--help``."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for k, kind in keys.items():
            lines.append(f"  {k} = <{kind}>")
    return "\n".join(lines)
