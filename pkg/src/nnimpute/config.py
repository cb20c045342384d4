"""Flat ``key: value`` config files for the CLI (YAML syntax, no nesting)."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Union

import yaml

from .simulation import ScenarioConfig


class ConfigError(ValueError):
    pass


ESTIMATE_DEFAULTS = {
    "N": None,  # known population size; required
    "targets": ["mean"],  # mean | proportion:<c> | quantile:<alpha>
    "basis": "quadratic",
    "variance": ["proposed"],  # proposed | naive
    "replication": "jackknife",  # jackknife | bootstrap
    "n_replicates": 200,
    "bandwidth_scale": 1.5,
    "bandwidth": None,
    "seed": 0,
}


def _load_flat(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected key: value pairs")
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: nested sections are not supported: {nested}")
    return raw


def _as_list(v):
    return [v] if isinstance(v, (str, int, float)) else list(v)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    raw = _load_flat(path)
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    for key in ("targets", "methods"):
        if key in raw:
            raw[key] = tuple(_as_list(raw[key]))
    try:
        return ScenarioConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_estimate_config(path: Union[str, Path]) -> dict:
    raw = _load_flat(path)
    unknown = sorted(set(raw) - set(ESTIMATE_DEFAULTS))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    cfg = {**ESTIMATE_DEFAULTS, **raw}
    if cfg["N"] is None or int(cfg["N"]) < 1:
        raise ConfigError(f"{path}: N (known population size) is required")
    cfg["targets"] = [str(t) for t in _as_list(cfg["targets"])]
    cfg["variance"] = [str(v) for v in _as_list(cfg["variance"])]
    if cfg["basis"] not in ("linear", "quadratic"):
        raise ConfigError(f"{path}: basis must be linear or quadratic")
    if cfg["replication"] not in ("jackknife", "bootstrap"):
        raise ConfigError(f"{path}: replication must be jackknife or bootstrap")
    bad = [v for v in cfg["variance"] if v not in ("proposed", "naive")]
    if bad:
        raise ConfigError(f"{path}: unknown variance methods {bad}")
    return cfg


def dump(d: dict) -> str:
    return yaml.safe_dump(d, sort_keys=False, default_flow_style=None)
