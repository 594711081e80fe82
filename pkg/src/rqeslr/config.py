"""Run configuration files (YAML or JSON) with strict key checking."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .encoding import EncodingConfig
from .errors import ConfigError
from .splits import SplitSpec
from .training import TrainConfig

MODEL_KEYS = ("d_model", "n_layers", "n_heads", "d_ff", "dropout", "max_frames")
PATH_KEYS = ("manifest", "encoded_dir", "output_dir")
SECTIONS = {
    "encoding": [f.name for f in dataclasses.fields(EncodingConfig)],
    "model": list(MODEL_KEYS),
    "train": [f.name for f in dataclasses.fields(TrainConfig)],
    "split": [f.name for f in dataclasses.fields(SplitSpec)],
    "paths": list(PATH_KEYS),
}

# small-vocabulary defaults; n_classes comes from the data
MODEL_DEFAULTS = {"d_model": 224, "n_layers": 3, "n_heads": 8, "d_ff": None, "dropout": 0.1, "max_frames": 247}


@dataclass
class RunConfig:
    seed: int = 0
    encoding: Dict[str, Any] = field(default_factory=dict)
    model: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    split: Dict[str, Any] = field(default_factory=dict)
    paths: Dict[str, Optional[str]] = field(default_factory=dict)

    def section(self, name: str, overrides: Optional[dict] = None) -> dict:
        merged = dict(getattr(self, name))
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return merged


def parse_run_config(doc) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a mapping")
    unknown = set(doc) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {', '.join(sorted(unknown))}")
    cfg = RunConfig(seed=int(doc.get("seed", 0)))
    for name, allowed in SECTIONS.items():
        section = doc.get(name)
        section = {} if section is None else section
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
        bad = set(section) - set(allowed)
        if bad:
            raise ConfigError(f"unknown key(s) in section {name!r}: {', '.join(sorted(bad))}")
        setattr(cfg, name, dict(section))
    return cfg


def load_run_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse config: {exc}") from None
    return parse_run_config(doc)


def build_encoding(values: dict) -> EncodingConfig:
    values = dict(values)
    if "levels" in values:
        values["levels"] = tuple(values["levels"]) if isinstance(values["levels"], (list, tuple)) else values["levels"]
    try:
        return EncodingConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid encoding config: {exc}") from None
