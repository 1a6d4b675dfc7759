"""Run configuration: an INI file with ``[sim]``, ``[model]``, ``[train]`` and ``[paths]`` sections.

Values are parsed as JSON when possible (numbers, lists, booleans) and kept as
plain strings otherwise. Unknown sections or keys are rejected.

Example::

    [sim]
    F = 10
    w_c = [1, 1, 0, 0, 0, 0, 0, 0, 0, 0]

    [model]
    M = 64

    [train]
    max_epochs = 100

    [paths]
    data = runs/hawkes.jsonl
"""

from __future__ import annotations

import configparser
import copy
import dataclasses
import json
from pathlib import Path
from typing import Any

from .encoder import HyperParams
from .simulate import SimConfig
from .train import TrainConfig

PATH_KEYS = ("data", "model", "out")
SECTIONS = {"sim": SimConfig, "model": HyperParams, "train": TrainConfig}


class ConfigError(ValueError):
    pass


@dataclasses.dataclass
class RunConfig:
    sim: dict[str, Any] = dataclasses.field(default_factory=dict)
    model: dict[str, Any] = dataclasses.field(default_factory=dict)
    train: dict[str, Any] = dataclasses.field(default_factory=dict)
    paths: dict[str, str] = dataclasses.field(default_factory=dict)

    def sim_config(self, **override) -> SimConfig:
        return SimConfig(**{**self.sim, **override})

    def hyperparams(self, **override) -> HyperParams:
        return HyperParams(**{**self.model, **override})

    def train_config(self, **override) -> TrainConfig:
        return TrainConfig(**{**self.train, **override})


# Small enough for quick smoke runs and the gradient check.
PRESETS: dict[str, RunConfig] = {
    "tiny": RunConfig(
        sim=dict(F=3, N=64, T=6.0, w_t=[0.4] * 3, w_c=[1.0, 1.0, 0.0], alpha=0.5, beta=1.0),
        model=dict(K=2, F=3, M=8, M_K=8, M_V=4, H=2, H_fi=2, C=2),
        train=dict(max_epochs=5, patience=3),
    ),
    "default": RunConfig(),
}


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(spec: str | Path | None) -> RunConfig:
    """Load a preset by name (``tiny``, ``default``) or an INI file; ``None`` gives defaults."""
    if spec is None:
        return RunConfig()
    if str(spec) in PRESETS:
        return copy.deepcopy(PRESETS[str(spec)])
    path = Path(spec)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case-sensitive (M vs m)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None
    cfg = RunConfig()
    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "paths":
            unknown = set(items) - set(PATH_KEYS)
            if unknown:
                raise ConfigError(f"unknown key(s) in [paths]: {sorted(unknown)}")
            cfg.paths = items
            continue
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        fields = {f.name for f in dataclasses.fields(SECTIONS[section])}
        unknown = set(items) - fields
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
        setattr(cfg, section, {k: _parse_value(v) for k, v in items.items()})
    # construct once so type and range errors surface before any work starts
    try:
        cfg.sim_config()
        cfg.hyperparams()
        cfg.train_config()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid configuration: {e}") from None
    return cfg
