"""Training configuration and JSON config-file handling.

Config files are JSON with optional top-level sections ``train`` and
``phantom``; CLI flags override individual fields.  The ``lambda`` key in
files and on the wire maps to :attr:`TrainConfig.lam`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError
from ..phantom import PhantomConfig, benchmark_config


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    epochs: int = 60
    learning_rate: float = 1e-3
    lam: float = 1.0  # weight on the distance loss; 0 trains the CAMs-alone baseline
    seed: int = 0
    threshold_frac: float = 0.4
    suv_frac: float = 0.4
    max_suv: float = 30.0
    target_spacing: tuple[float, float, float] = (2.0, 2.0, 2.0)
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    report_samples: int = 4

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 < self.threshold_frac < 1.0:
            raise ConfigError(f"threshold_frac must be in (0, 1), got {self.threshold_frac}")
        if not 0.0 <= self.suv_frac < 1.0:
            raise ConfigError(f"suv_frac must be in [0, 1), got {self.suv_frac}")
        if self.max_suv <= 0:
            raise ConfigError(f"max_suv must be positive, got {self.max_suv}")
        if len(self.target_spacing) != 3 or any(s <= 0 for s in self.target_spacing):
            raise ConfigError(f"target_spacing must be three positive values, got {self.target_spacing}")
        if self.report_samples < 0:
            raise ConfigError(f"report_samples must be >= 0, got {self.report_samples}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        object.__setattr__(self, "target_spacing", tuple(float(s) for s in self.target_spacing))
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        d["target_spacing"] = list(self.target_spacing)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        kwargs = dict(d)
        if "lambda" in kwargs:
            kwargs["lam"] = kwargs.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **overrides) -> "TrainConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self


def load_config_file(path) -> dict:
    """Read a JSON config file; returns the raw dict (possibly sectioned)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return data


def train_config_from_file(config: dict | None, **overrides) -> TrainConfig:
    section = (config or {}).get("train", {})
    if not isinstance(section, dict):
        raise ConfigError("'train' section must be a JSON object")
    return TrainConfig.from_dict(section).with_overrides(**overrides)


def phantom_config_from_file(config: dict | None, **overrides) -> PhantomConfig:
    section = dict((config or {}).get("phantom", {}))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    section.update(overrides)
    if not section:
        return benchmark_config()
    if "class_specs" not in section:
        base = benchmark_config()
        shape = tuple(section.get("shape", base.shape))
        section.setdefault("shape", list(shape))
        from ..phantom import default_class_specs

        section["class_specs"] = [s.to_dict() for s in default_class_specs(shape)]
    return PhantomConfig.from_dict(section)
