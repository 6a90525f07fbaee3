"""Experiment config files: YAML or JSON with nested sections for
dataset / model / training / search. Unknown keys are hard errors."""

from __future__ import annotations

import json
import re
from dataclasses import asdict
from pathlib import Path

import yaml

from ctrbench.errors import ConfigError
from ctrbench.models.base import ModelConfig
from ctrbench.training import TrainConfig

_TOP_SECTIONS = ("dataset", "model", "training", "search")
# YAML 1.1 parses "1e-3" (no dot, no sign) as a string; accept it anyway.
_SCI_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)[eE][+-]?\d+$")


def _coerce_numbers(node):
    if isinstance(node, dict):
        return {k: _coerce_numbers(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_coerce_numbers(v) for v in node]
    if isinstance(node, str) and _SCI_FLOAT.match(node):
        return float(node)
    return node


def load_structured_file(path: Path) -> dict:
    """YAML or JSON mapping with scientific-notation strings coerced to
    floats; no schema applied."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    payload = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if not isinstance(payload, dict):
        raise ConfigError(f"config root must be a mapping, got {type(payload)}")
    return _coerce_numbers(payload)


def load_config_file(path: Path) -> dict:
    payload = load_structured_file(path)
    unknown = set(payload) - set(_TOP_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}; "
                          f"expected {_TOP_SECTIONS}")
    return payload


def _jsonable(node):
    if isinstance(node, dict):
        return {k: _jsonable(v) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_jsonable(v) for v in node]
    return node


def parse_experiment(payload: dict, seed_override: int | None = None
                     ) -> tuple[ModelConfig, TrainConfig, dict]:
    """Resolve an experiment config into typed configs plus the fully
    resolved (defaults filled in) snapshot that digests and logs use."""
    if "model" not in payload:
        raise ConfigError("experiment config needs a 'model' section")
    model_dict = dict(payload["model"])
    train_dict = dict(payload.get("training", {}))
    if seed_override is not None:
        train_dict["seed"] = int(seed_override)
    model_cfg = ModelConfig.from_dict(model_dict)
    train_cfg = TrainConfig.from_dict(train_dict)
    resolved = {"model": _jsonable(asdict(model_cfg)),
                "training": _jsonable(asdict(train_cfg))}
    return model_cfg, train_cfg, resolved
