"""SeATrans assembly: a frozen (or jointly trained) UNet whose decoder pyramid
vitalizes selected stages of a residual diagnosis network.

Ablation variants share this class. The interaction module placed after a
stage's residual blocks depends on the flags:

* no flags: no interaction at all (vanilla classifier);
* ``multi_scale``: every stage whose rate matches a pyramid level fuses that
  one level by concatenation and a 1x1 conv;
* ``+ asymmetric``: the selected stages get the coarse/fine structure, with
  concatenation fusion in both paths;
* ``+ sea_block``: the coarse and fine paths use SeA-blocks.
"""

from __future__ import annotations

import contextlib
import dataclasses
from dataclasses import dataclass
from typing import Iterator

import torch
from torch import Tensor, nn

from .backbones import DiagnosisNet, SegFeaturePyramid, UNet, diag_stage_forward
from .config import ABLATION_ROWS, BackboneConfig, SeATransConfig
from .errors import InvalidAblationError, ScaleAlignmentError, ShapeMismatchError
from .sea_block import SeABlock
from .tensors import pixel_shuffle


@dataclass
class ModelOutput:
    logit: Tensor
    mask_logits: Tensor | None = None

    @property
    def prob(self) -> Tensor:
        return torch.sigmoid(self.logit)


@contextlib.contextmanager
def seeded(seed: int) -> Iterator[None]:
    """Run a block under a fixed torch seed without touching the global RNG state."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def pyramid_channels(cfg: BackboneConfig) -> dict[int, int]:
    """Channel count of each segmentation pyramid level, keyed by downsample rate."""
    return {2**k: cfg.seg_base_width * 2**k for k in range(1, cfg.seg_depth + 1)}


class ConcatFusion(nn.Module):
    """Concatenate segmentation and diagnosis channels, 1x1 conv back to the diagnosis width."""

    def __init__(self, seg_channels: int, diag_channels: int) -> None:
        super().__init__()
        self.conv = nn.Conv2d(seg_channels + diag_channels, diag_channels, 1)

    def forward(self, f_m: Tensor, f_d: Tensor) -> Tensor:
        if f_m.shape[-2:] != f_d.shape[-2:]:
            raise ShapeMismatchError(
                f"cannot fuse {tuple(f_m.shape)} into {tuple(f_d.shape)}: spatial sizes differ"
            )
        return self.conv(torch.cat([f_d, f_m], dim=1))


class SymmetricInteraction(nn.Module):
    """One-to-one fusion with the pyramid level at the same rate."""

    def __init__(self, rate: int, seg_channels: int, diag_channels: int) -> None:
        super().__init__()
        self.rate = rate
        self.fusion = ConcatFusion(seg_channels, diag_channels)

    def forward(self, f_d: Tensor, pyramid: SegFeaturePyramid) -> Tensor:
        return self.fusion(pyramid.features[pyramid.level_for_rate(self.rate)], f_d)


class AsymmetricInteraction(nn.Module):
    """Coarse path with the same-rate level, fine path with every coarser level.

    Coarser levels are pixel-shuffled up to the diagnosis resolution,
    concatenated and projected to the same-rate level's channel count. The two
    vitalized features are fused by a 1x1 conv; with no coarser levels the
    fusion acts on the coarse path alone.
    """

    def __init__(
        self,
        rate: int,
        level_channels: dict[int, int],
        diag_channels: int,
        use_sea_block: bool = True,
        num_heads: int = 4,
        depth: int = 1,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        if rate not in level_channels:
            raise ScaleAlignmentError(
                f"no segmentation level at rate {rate}; levels are {sorted(level_channels)}"
            )
        self.rate = rate
        self.fine_rates = sorted(r for r in level_channels if r > rate)
        seg_channels = level_channels[rate]

        def path() -> nn.Module:
            if use_sea_block:
                return SeABlock(
                    seg_channels, diag_channels, num_heads=num_heads, depth=depth,
                    mlp_ratio=mlp_ratio, dropout=dropout,
                )
            return ConcatFusion(seg_channels, diag_channels)

        self.coarse = path()
        if self.fine_rates:
            shuffled = sum(level_channels[r] // (r // rate) ** 2 for r in self.fine_rates)
            self.fine_proj = nn.Conv2d(shuffled, seg_channels, 1)
            self.fine = path()
        else:
            self.fine_proj = None
            self.fine = None
        n_paths = 2 if self.fine_rates else 1
        self.fuse = nn.Conv2d(n_paths * diag_channels, diag_channels, 1)

    def fine_input(self, pyramid: SegFeaturePyramid) -> Tensor:
        shuffled = [
            pixel_shuffle(pyramid.features[pyramid.level_for_rate(r)], r // self.rate)
            for r in self.fine_rates
        ]
        return self.fine_proj(torch.cat(shuffled, dim=1))

    def forward(self, f_d: Tensor, pyramid: SegFeaturePyramid) -> Tensor:
        f_m = pyramid.features[pyramid.level_for_rate(self.rate)]
        paths = [self.coarse(f_m, f_d)]
        if self.fine is not None:
            paths.append(self.fine(self.fine_input(pyramid), f_d))
        return self.fuse(torch.cat(paths, dim=1))


def asym_interaction(
    f_d: Tensor, pyramid: SegFeaturePyramid, interaction: AsymmetricInteraction
) -> Tensor:
    """Vitalize ``f_d`` with the pyramid; output has ``f_d``'s shape."""
    if f_d.shape[-2:] != pyramid.features[pyramid.level_for_rate(interaction.rate)].shape[-2:]:
        raise ScaleAlignmentError(
            f"diagnosis feature {tuple(f_d.shape)} does not match the rate-{interaction.rate} level"
        )
    return interaction(f_d, pyramid)


class SegmentationAssisted(nn.Module):
    """Base for models that consult a (by default frozen) segmentation UNet.

    A frozen UNet stays in eval mode and runs without autograd.
    """

    segmentation: UNet | None

    def set_segmentation_frozen(self, frozen: bool) -> None:
        self.segmentation_frozen = frozen
        if self.segmentation is not None:
            self.segmentation.requires_grad_(not frozen)
            if frozen:
                self.segmentation.eval()

    def train(self, mode: bool = True):
        super().train(mode)
        if self.segmentation is not None and getattr(self, "segmentation_frozen", False):
            self.segmentation.eval()
        return self

    @property
    def default_cam_layer(self) -> str:
        """Last full-resolution feature map of the final stage, before its downsample."""
        last = len(self.diagnosis.stages)
        interactions = getattr(self, "interactions", {})
        if str(last) in interactions:
            return f"interactions.{last}"
        return f"diagnosis.stages.{last - 1}.blocks"

    def segment(self, image: Tensor) -> tuple[Tensor, SegFeaturePyramid]:
        if self.segmentation is None:
            raise RuntimeError("this variant has no segmentation branch")
        if self.segmentation_frozen:
            with torch.no_grad():
                return self.segmentation(image)
        return self.segmentation(image)


class SeATrans(SegmentationAssisted):
    def __init__(self, cfg: SeATransConfig, seed: int = 0) -> None:
        super().__init__()
        self.cfg = cfg
        bb = cfg.backbone
        # per-component seeds keep the diagnosis init identical across variants
        with seeded(seed):
            self.diagnosis = DiagnosisNet(bb)

        self.interactions = nn.ModuleDict()
        levels = pyramid_channels(bb)
        multi_scale, asymmetric, sea = cfg.flags
        if asymmetric:
            for stage in cfg.interaction_layers:
                rate = bb.stage_rate(stage)
                with seeded(seed + 100 + stage):
                    self.interactions[str(stage)] = AsymmetricInteraction(
                        rate, levels, bb.stage_widths[stage - 1], use_sea_block=sea,
                        num_heads=cfg.num_heads, depth=cfg.depth,
                        mlp_ratio=cfg.mlp_ratio, dropout=cfg.dropout,
                    )
        elif multi_scale:
            for stage in range(1, bb.num_stages + 1):
                rate = bb.stage_rate(stage)
                if rate in levels:
                    with seeded(seed + 100 + stage):
                        self.interactions[str(stage)] = SymmetricInteraction(
                            rate, levels[rate], bb.stage_widths[stage - 1]
                        )

        self.segmentation: UNet | None = None
        if len(self.interactions):
            with seeded(seed + 1):
                self.segmentation = UNet.from_config(bb)
        self.set_segmentation_frozen(True)

    def forward(self, image: Tensor) -> ModelOutput:
        mask_logits = pyramid = None
        if self.segmentation is not None:
            mask_logits, pyramid = self.segment(image)
        net = self.diagnosis
        x = net.stem(image)
        for idx, stage in enumerate(net.stages, start=1):
            key = str(idx)
            if key in self.interactions:
                x = stage.blocks(x)
                x = self.interactions[key](x, pyramid)
                x = stage.down(x)
            else:
                x = diag_stage_forward(x, stage)
        return ModelOutput(net.head(x), mask_logits)


def ablation_config(flags: tuple[bool, bool, bool], cfg: SeATransConfig | None = None) -> SeATransConfig:
    """Copy of ``cfg`` set to one ablation row, ``flags = (multi_scale, asymmetric, sea_block)``."""
    flags = tuple(bool(f) for f in flags)
    if flags not in ABLATION_ROWS:
        raise InvalidAblationError(f"{flags} is not one of the ablation rows {ABLATION_ROWS}")
    multi_scale, asymmetric, sea = flags
    return dataclasses.replace(
        cfg or SeATransConfig(),
        kind="seatrans" if any(flags) else "vanilla",
        multi_scale=multi_scale,
        asymmetric=asymmetric,
        sea_block=sea,
    )


def build_ablation_variant(
    flags: tuple[bool, bool, bool],
    cfg: SeATransConfig | None = None,
    seed: int = 0,
) -> SeATrans:
    """Model for one row of the ablation table."""
    return SeATrans(ablation_config(flags, cfg), seed=seed)
