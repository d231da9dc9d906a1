"""YAML-backed configuration: every knob has a code default; a config
file overrides fields by section. The canonical JSON dump of the merged
configuration is hashed into every result manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import AugmentConfig, BuildConfig
from .errors import ValidationError
from .generator import GeneratorConfig
from .terrain import ScanPattern
from .tracker import EnvConfig, InitRandomization, PpoConfig, StageConfig


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 500
    height_scale: float = 1.0
    tasks: tuple[str, ...] = ("box_climb", "vault", "stairs_up", "stairs_down", "jump_down")
    gen_steps: int = 2


@dataclass(frozen=True)
class Config:
    dataset: BuildConfig = field(default_factory=BuildConfig)
    dataset_walks: int = 4
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    stage: StageConfig = field(default_factory=StageConfig)
    pretrain_iterations: int | None = None
    finetune_iterations: int | None = None
    eval: EvalSettings = field(default_factory=EvalSettings)


_NESTED = {
    "scan": ScanPattern,
    "augment": AugmentConfig,
    "ppo": PpoConfig,
    "env": EnvConfig,
    "init_rand": InitRandomization,
}


def _merge(cls, overrides: dict):
    """Rebuild a (frozen) dataclass with overrides applied field-wise."""
    defaults = cls()
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in overrides.items():
        if key not in names:
            raise ValidationError(f"unknown config key {key!r} for {cls.__name__}")
        current = getattr(defaults, key)
        if isinstance(value, dict):
            sub_cls = _NESTED.get(key, type(current))
            kwargs[key] = _merge(sub_cls, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return dataclasses.replace(defaults, **kwargs)


def load_config(path: str | Path | None) -> tuple[Config, str]:
    """Config + short hash of its canonical form."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file not found: {p}")
        doc = yaml.safe_load(p.read_text()) or {}
        if not isinstance(doc, dict):
            raise ValidationError(f"config file {p} must hold a mapping")
    cfg = _merge(Config, doc)
    return cfg, config_hash(cfg)


def _as_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _as_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_as_jsonable(v) for v in obj]
    return obj


def config_hash(cfg: Config) -> str:
    dump = json.dumps(_as_jsonable(cfg), sort_keys=True)
    return hashlib.sha256(dump.encode()).hexdigest()[:16]
