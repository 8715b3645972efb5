"""Segmentation-assisted diagnosis with cross-attention between UNet and classifier features."""

from .baselines import CatBaseline, MultiTaskBaseline, RoiBaseline, build_model, build_vanilla
from .config import BackboneConfig, RunConfig, SeATransConfig, TrainConfig, backbone_preset
from .model import ModelOutput, SeATrans, build_ablation_variant

__all__ = [
    "BackboneConfig",
    "CatBaseline",
    "ModelOutput",
    "MultiTaskBaseline",
    "RoiBaseline",
    "RunConfig",
    "SeATrans",
    "SeATransConfig",
    "TrainConfig",
    "backbone_preset",
    "build_ablation_variant",
    "build_model",
    "build_vanilla",
]

__version__ = "0.1.0"
