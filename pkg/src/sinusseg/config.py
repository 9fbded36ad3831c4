"""Structured run configuration: one YAML file drives every phase.

Defaults reproduce the published training protocol (AdamW at 1e-5,
10 epochs at batch 8 for segmentation, 100 epochs at batch 10 for the
refiner, alpha=0.5, beta=1e-6, lambda=10, T=2). Desk-scale runs override
sizes and learning rates explicitly in their config file; nothing is
tuned silently at runtime.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .losses import LossParams
from .nets.backbone import BackboneSpec


@dataclass
class OptimizerConfig:
    name: str = "adamw"
    learning_rate: float = 1e-5
    weight_decay: float = 0.01


@dataclass
class PhaseFlags:
    """Switches reproducing every ablation cell of the flag grid."""

    use_unlabeled: bool = True
    use_kd: bool = True
    use_weighting: bool = True
    use_refiner: bool = True
    use_cbam: bool = True


@dataclass
class RefinerConfig:
    epochs: int = 100
    batch_size: int = 10
    resolution: int = 256
    learning_rate: float | None = None  # None inherits the run optimizer's rate
    adam_betas: tuple = (0.9, 0.999)
    base_channels: int = 32
    n_res_blocks: int = 4
    disc_channels: int = 32
    correction_base_channels: int = 32

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.resolution % 16 != 0:
            raise ConfigError(f"refiner resolution must be divisible by 16, got {self.resolution}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("refiner epochs and batch_size must be >= 1")


@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 8
    loss: LossParams = field(default_factory=LossParams)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    backbone: BackboneSpec = field(default_factory=BackboneSpec)
    flags: PhaseFlags = field(default_factory=PhaseFlags)
    refiner: RefinerConfig = field(default_factory=RefinerConfig)
    eval_boundary_only: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")

    @property
    def image_size(self) -> int:
        return self.backbone.input_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["refiner"]["adam_betas"] = list(self.refiner.adam_betas)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj or {})
        sections = {
            "loss": LossParams,
            "optimizer": OptimizerConfig,
            "backbone": BackboneSpec,
            "flags": PhaseFlags,
            "refiner": RefinerConfig,
        }
        kwargs = {}
        for key, value in obj.items():
            if key in sections:
                kwargs[key] = _build_section(sections[key], value, key)
            elif key in {f.name for f in fields(cls)}:
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def _build_section(section_cls, value, name):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    known = {f.name for f in fields(section_cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in section {name!r}: {sorted(unknown)}")
    try:
        return section_cls(**value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            obj = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig.from_dict(obj or {})


def save_config(cfg: RunConfig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


def config_hash(cfg: RunConfig) -> str:
    """Stable short digest of the full configuration."""
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]
