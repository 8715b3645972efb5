"""Configuration dataclasses and the YAML run-config schema.

A run config file has four sections, each optional::

    seed: 0
    data:   {preset: synthetic-a, n_train: 128, n_val: 0, n_test: 64}
    model:  {kind: seatrans, preset: miniature, interaction_layers: [2, 3], ...}
    train:  {learning_rate: 1.0e-4, batch_size: 16, epochs: 80}
    seg_train: {learning_rate: 1.0e-3, epochs: 10}

``model.preset`` selects a :data:`BACKBONE_PRESETS` entry; any ``backbone``
keys given alongside override it. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError, InvalidAblationError

MODEL_KINDS = ("seatrans", "vanilla", "cat", "multi", "roi")

# (multi_scale, asymmetric, sea_block) rows of the ablation table, in order
ABLATION_ROWS = (
    (False, False, False),
    (True, False, False),
    (True, True, False),
    (True, True, True),
)


def _reject_unknown(cls: type, data: dict[str, Any]) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")


def _as_pair(value: Any) -> tuple[int, int]:
    if isinstance(value, int):
        return (value, value)
    h, w = value
    return (int(h), int(w))


@dataclass(frozen=True)
class BackboneConfig:
    """Sizes of the segmentation UNet and the residual diagnosis network.

    ``stage_widths`` are the input channel counts of the diagnosis stages;
    every stage doubles channels and halves resolution, so each width must be
    twice the previous one. The stem maps the image to ``stage_widths[0]``
    channels at ``1/stem_stride`` resolution.
    """

    input_size: tuple[int, int] = (256, 256)
    in_channels: int = 3
    num_classes: int = 2
    seg_base_width: int = 16
    seg_depth: int = 4
    stem_stride: int = 4
    stage_widths: tuple[int, ...] = (32, 64, 128)
    blocks_per_stage: tuple[int, ...] = (1, 1, 1)

    def __post_init__(self) -> None:
        object.__setattr__(self, "input_size", _as_pair(self.input_size))
        object.__setattr__(self, "stage_widths", tuple(self.stage_widths))
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        self.validate()

    @property
    def num_stages(self) -> int:
        return len(self.stage_widths)

    def stage_rate(self, stage: int) -> int:
        """Downsample rate of the feature a 1-based diagnosis stage operates on."""
        return self.stem_stride * 2 ** (stage - 1)

    def validate(self) -> None:
        h, w = self.input_size
        if self.seg_depth < 2:
            raise ConfigError(f"segmentation pyramid needs depth >= 2, got {self.seg_depth}")
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        if self.stem_stride not in (1, 2, 4):
            raise ConfigError(f"stem_stride must be 1, 2 or 4, got {self.stem_stride}")
        if len(self.blocks_per_stage) != self.num_stages:
            raise ConfigError("blocks_per_stage must have one entry per stage")
        for a, b in zip(self.stage_widths, self.stage_widths[1:]):
            if b != 2 * a:
                raise ConfigError(f"stage widths must double, got {self.stage_widths}")
        total = max(2**self.seg_depth, self.stem_stride * 2**self.num_stages)
        if h % total or w % total:
            raise ConfigError(f"input size {h}x{w} must be divisible by {total}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BackboneConfig":
        _reject_unknown(cls, data)
        return cls(**data)


BACKBONE_PRESETS: dict[str, BackboneConfig] = {
    "default": BackboneConfig(),
    "miniature": BackboneConfig(
        input_size=(32, 32), seg_base_width=8, stage_widths=(8, 16, 32)
    ),
    # full-width residual stages at ResNet50 widths
    "resnet50": BackboneConfig(
        seg_base_width=64,
        stage_widths=(256, 512, 1024),
        blocks_per_stage=(3, 4, 6),
    ),
}


def backbone_preset(name: str, **overrides: Any) -> BackboneConfig:
    try:
        base = BACKBONE_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown backbone preset {name!r}; choose from {sorted(BACKBONE_PRESETS)}")
    return dataclasses.replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class SeATransConfig:
    kind: str = "seatrans"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    interaction_layers: tuple[int, ...] = (2, 3)
    multi_scale: bool = True
    asymmetric: bool = True
    sea_block: bool = True
    num_heads: int = 4
    depth: int = 1
    mlp_ratio: int = 4
    dropout: float = 0.0
    roi_margin: float = 0.2
    seg_checkpoint: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "interaction_layers", tuple(sorted(set(self.interaction_layers))))
        self.validate()

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return (self.multi_scale, self.asymmetric, self.sea_block)

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; choose from {MODEL_KINDS}")
        if self.flags not in ABLATION_ROWS:
            raise InvalidAblationError(
                f"flags multi_scale={self.multi_scale}, asymmetric={self.asymmetric}, "
                f"sea_block={self.sea_block} are not an ablation row"
            )
        for i in self.interaction_layers:
            if not 1 <= i <= self.backbone.num_stages:
                raise ConfigError(
                    f"interaction layer {i} outside stages 1..{self.backbone.num_stages}"
                )
        if not 0.0 <= self.roi_margin:
            raise ConfigError("roi_margin must be non-negative")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SeATransConfig":
        data = dict(data)
        preset = data.pop("preset", "default")
        backbone = data.pop("backbone", {}) or {}
        _reject_unknown(cls, data)
        return cls(backbone=backbone_preset(preset, **backbone), **data)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 16
    epochs: int = 80
    max_steps: int | None = None
    seed: int = 0
    freeze_segmentation: bool = True
    seg_loss_weight: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        _reject_unknown(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class DataConfig:
    """Either a manifest file or a synthetic preset.

    ``image_size`` defaults to the model backbone's input size.
    """

    manifest: str | None = None
    preset: str | None = "synthetic-a"
    image_size: int | None = None
    n_train: int = 128
    n_val: int = 0
    n_test: int = 64

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DataConfig":
        _reject_unknown(cls, data)
        return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: SeATransConfig = field(default_factory=SeATransConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seg_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(learning_rate=1e-3, epochs=10)
    )

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        data = dict(data or {})
        _reject_unknown(cls, data)
        kwargs: dict[str, Any] = {}
        if "seed" in data:
            kwargs["seed"] = int(data["seed"])
        if "data" in data:
            kwargs["data"] = DataConfig.from_dict(data["data"] or {})
        if "model" in data:
            kwargs["model"] = SeATransConfig.from_dict(data["model"] or {})
        if "train" in data:
            kwargs["train"] = TrainConfig.from_dict(data["train"] or {})
        if "seg_train" in data:
            kwargs["seg_train"] = TrainConfig.from_dict(data["seg_train"] or {})
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def model_config_from_dict(data: dict[str, Any]) -> SeATransConfig:
    """Rebuild a model config from :meth:`SeATransConfig.to_dict` output."""
    data = dict(data)
    backbone = BackboneConfig.from_dict(data.pop("backbone"))
    _reject_unknown(SeATransConfig, data)
    return SeATransConfig(backbone=backbone, **data)


def load_run_config(path: str | Path, overrides: dict[str, Any] | None = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return RunConfig.from_dict(raw)
