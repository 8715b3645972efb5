"""Comparison models: vanilla, input concatenation, multi-task and ROI crop."""

from __future__ import annotations

import dataclasses

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbones import ClassifierHead, DiagnosisNet, UNet, UNetDecoder, UNetEncoder
from .config import SeATransConfig
from .errors import ShapeMismatchError
from .model import ModelOutput, SeATrans, SegmentationAssisted, build_ablation_variant, seeded

ROI_THRESHOLD = 0.5


def build_vanilla(cfg: SeATransConfig | None = None, seed: int = 0) -> SeATrans:
    return build_ablation_variant((False, False, False), cfg, seed)


class CatBaseline(SegmentationAssisted):
    """Diagnosis network whose input is the image concatenated with mask probabilities."""

    def __init__(self, cfg: SeATransConfig, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        bb = cfg.backbone
        with seeded(seed):
            self.diagnosis = DiagnosisNet(bb, in_channels=bb.in_channels + bb.num_classes)
        with seeded(seed + 1):
            self.segmentation = UNet.from_config(bb)
        self.set_segmentation_frozen(True)

    def forward_with_mask(self, image: Tensor, mask_probs: Tensor) -> Tensor:
        if mask_probs.shape[-2:] != image.shape[-2:]:
            raise ShapeMismatchError(
                f"mask resolution {tuple(mask_probs.shape[-2:])} != image resolution "
                f"{tuple(image.shape[-2:])}"
            )
        return self.diagnosis(torch.cat([image, mask_probs], dim=1))

    def forward(self, image: Tensor) -> ModelOutput:
        mask_logits, _ = self.segment(image)
        return ModelOutput(self.forward_with_mask(image, torch.sigmoid(mask_logits)), mask_logits)


def base_cat_forward(model: CatBaseline, image: Tensor, mask_probs: Tensor) -> Tensor:
    return torch.sigmoid(model.forward_with_mask(image, mask_probs))


class MultiTaskBaseline(nn.Module):
    """Shared UNet encoder with a mask decoder and a pooled diagnosis head on the bottleneck.

    Always trained jointly; the diagnosis loss never reaches the decoder.
    """

    segmentation = None

    def __init__(self, cfg: SeATransConfig, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        bb = cfg.backbone
        with seeded(seed):
            self.encoder = UNetEncoder(bb.in_channels, bb.seg_base_width, bb.seg_depth)
            self.head = ClassifierHead(bb.seg_base_width * 2**bb.seg_depth)
        with seeded(seed + 1):
            self.decoder = UNetDecoder(bb.seg_base_width, bb.seg_depth, bb.num_classes)
        self.default_cam_layer = f"encoder.downs.{bb.seg_depth - 1}"

    def forward(self, image: Tensor) -> ModelOutput:
        encoded = self.encoder(image)
        mask_logits, _ = self.decoder(encoded)
        return ModelOutput(self.head(encoded[-1]), mask_logits)


def roi_box(mask: Tensor, margin: float = 0.2) -> tuple[int, int, int, int] | None:
    """Bounding box ``(top, left, bottom, right)``, end-exclusive, of a 2-D boolean mask.

    Each side grows by ``round(margin * box extent)`` pixels and is clamped to
    the mask bounds. Returns ``None`` for an empty mask.
    """
    rows = torch.nonzero(mask.any(dim=1)).flatten()
    cols = torch.nonzero(mask.any(dim=0)).flatten()
    if rows.numel() == 0:
        return None
    top, bottom = int(rows[0]), int(rows[-1]) + 1
    left, right = int(cols[0]), int(cols[-1]) + 1
    pad_h = int(round(margin * (bottom - top)))
    pad_w = int(round(margin * (right - left)))
    h, w = mask.shape
    return (max(top - pad_h, 0), max(left - pad_w, 0), min(bottom + pad_h, h), min(right + pad_w, w))


def base_roi_crop(
    image: Tensor,
    mask_probs: Tensor,
    margin: float = 0.2,
    out_size: tuple[int, int] | None = None,
) -> Tensor:
    """Crop each image to the box around its binarized mask, resized to ``out_size``.

    A sample whose mask is empty keeps its full image.
    """
    out_size = out_size or tuple(image.shape[-2:])
    masks = (mask_probs >= ROI_THRESHOLD).any(dim=1)
    crops = []
    for img, mask in zip(image, masks):
        box = roi_box(mask, margin)
        if box is not None:
            top, left, bottom, right = box
            img = img[:, top:bottom, left:right]
        if tuple(img.shape[-2:]) != tuple(out_size):
            img = F.interpolate(img[None], size=out_size, mode="bilinear", align_corners=False)[0]
        crops.append(img)
    return torch.stack(crops)


class RoiBaseline(SegmentationAssisted):
    """Vanilla diagnosis network applied to the segmentation-derived ROI crop."""

    def __init__(self, cfg: SeATransConfig, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        with seeded(seed):
            self.diagnosis = DiagnosisNet(cfg.backbone)
        with seeded(seed + 1):
            self.segmentation = UNet.from_config(cfg.backbone)
        self.set_segmentation_frozen(True)

    def forward(self, image: Tensor) -> ModelOutput:
        mask_logits, _ = self.segment(image)
        crop = base_roi_crop(image, torch.sigmoid(mask_logits).detach(), self.cfg.roi_margin)
        return ModelOutput(self.diagnosis(crop), mask_logits)


def build_model(cfg: SeATransConfig, seed: int = 0) -> nn.Module:
    """Construct the model selected by ``cfg.kind``."""
    if cfg.kind == "seatrans":
        return SeATrans(cfg, seed)
    if cfg.kind == "vanilla":
        return build_vanilla(cfg, seed)
    if cfg.kind == "cat":
        return CatBaseline(cfg, seed)
    if cfg.kind == "multi":
        return MultiTaskBaseline(cfg, seed)
    if cfg.kind == "roi":
        return RoiBaseline(cfg, seed)
    raise ValueError(f"unknown model kind {cfg.kind!r}")


def model_kind_config(cfg: SeATransConfig, kind: str) -> SeATransConfig:
    """Copy of ``cfg`` for another model kind; vanilla clears the interaction flags."""
    if kind == "vanilla":
        return dataclasses.replace(cfg, kind=kind, multi_scale=False, asymmetric=False, sea_block=False)
    return dataclasses.replace(cfg, kind=kind)
