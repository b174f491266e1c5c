"""Declarative experiment configuration.

One YAML file fully determines every artifact: dataset seeds and counts,
model dimensions, training hyperparameters, and the interactive protocol.
Unknown keys are rejected so typos cannot silently fall back to defaults.
"""

from dataclasses import dataclass, field, fields, replace

import yaml

from .data import SCENE_SIZES
from .model import ModelConfig

LOSS_MODES = ("pixelwise", "maskwise")
SHARING_MODES = ("shared", "unshared")
STRATEGIES = ("fixed", "free")


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    size: int = 64
    train_scenes: int = 200
    eval_scenes: int = 50
    stage1_fraction: float = 0.5

    def __post_init__(self):
        if self.size not in SCENE_SIZES:
            raise ValueError(f"dataset.size must be one of {SCENE_SIZES}")
        if self.train_scenes < 1 or self.eval_scenes < 1:
            raise ValueError("scene counts must be >= 1")
        if not 0.0 < self.stage1_fraction <= 1.0:
            raise ValueError("dataset.stage1_fraction must be in (0, 1]")


@dataclass(frozen=True)
class TrainingConfig:
    loss_mode: str = "pixelwise"
    sharing: str = "shared"
    steps_stage1: int = 1200
    steps_stage2: int = 600
    batch_size: int = 2
    learning_rate: float = 0.05
    box_margin: float = 0.1
    ep_jitter: int = 0
    checkpoint_every: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"training.loss_mode must be one of {LOSS_MODES}")
        if self.sharing not in SHARING_MODES:
            raise ValueError(f"training.sharing must be one of {SHARING_MODES}")
        if self.steps_stage1 < 1 or self.steps_stage2 < 1:
            raise ValueError("step counts must be >= 1")
        if self.batch_size < 1:
            raise ValueError("training.batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("training.learning_rate must be >= 0")
        if self.box_margin < 0:
            raise ValueError("training.box_margin must be >= 0")
        if self.ep_jitter < 0:
            raise ValueError("training.ep_jitter must be >= 0")


@dataclass(frozen=True)
class InteractionConfig:
    strategy: str = "fixed"
    rounds: int = 4

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"interaction.strategy must be one of {STRATEGIES}")
        if self.rounds < 0:
            raise ValueError("interaction.rounds must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    interaction: InteractionConfig = field(default_factory=InteractionConfig)

    def with_axes(self, loss_mode=None, sharing=None, strategy=None,
                  rounds=None, seed=None):
        """Copy with selected switches replaced; validation re-runs."""
        cfg = self
        if loss_mode is not None or sharing is not None:
            cfg = replace(cfg, training=replace(
                cfg.training,
                loss_mode=loss_mode or cfg.training.loss_mode,
                sharing=sharing or cfg.training.sharing))
        if strategy is not None or rounds is not None:
            cfg = replace(cfg, interaction=replace(
                cfg.interaction,
                strategy=strategy or cfg.interaction.strategy,
                rounds=cfg.interaction.rounds if rounds is None else rounds))
        if seed is not None:
            cfg = replace(cfg, dataset=replace(cfg.dataset, seed=seed))
        return cfg


def _build_section(cls, raw, where):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError(f"config section {where!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown keys in {where!r}: {', '.join(unknown)}")
    return cls(**raw)


def _build_model(raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError("config section 'model' must be a mapping")
    known = {f.name for f in fields(ModelConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown keys in 'model': {', '.join(unknown)}")
    if "backbone_strides" in raw:
        raw = dict(raw, backbone_strides=tuple(raw["backbone_strides"]))
    return ModelConfig(**raw)


def parse_config(raw, seed_override=None):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ValueError("config root must be a mapping")
    sections = {"dataset", "model", "training", "interaction"}
    unknown = sorted(set(raw) - sections)
    if unknown:
        raise ValueError(f"unknown config sections: {', '.join(unknown)}")
    cfg = ExperimentConfig(
        dataset=_build_section(DatasetConfig, raw.get("dataset"), "dataset"),
        model=_build_model(raw.get("model")),
        training=_build_section(TrainingConfig, raw.get("training"), "training"),
        interaction=_build_section(
            InteractionConfig, raw.get("interaction"), "interaction"),
    )
    if seed_override is not None:
        cfg = cfg.with_axes(seed=int(seed_override))
    return cfg


def load_config(path, seed_override=None):
    with open(path) as f:
        raw = yaml.safe_load(f)
    return parse_config(raw, seed_override)
