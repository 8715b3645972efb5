"""Segmentation UNet with a multi-scale decoder pyramid, and the residual diagnosis network."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import BackboneConfig
from .errors import DivisibilityError, ScaleAlignmentError, ShapeMismatchError


@dataclass
class SegFeaturePyramid:
    """Decoder features ordered largest spatial scale first.

    ``rates[j]`` is the downsample rate of ``features[j]``; consecutive rates
    differ by exactly a factor of two.
    """

    features: list[Tensor]
    rates: list[int]

    def __post_init__(self) -> None:
        if len(self.features) != len(self.rates) or len(self.features) < 2:
            raise ShapeMismatchError("a pyramid needs >= 2 levels with one rate each")
        for a, b in zip(self.rates, self.rates[1:]):
            if b != 2 * a:
                raise ShapeMismatchError(f"pyramid rates must double per level, got {self.rates}")

    def __len__(self) -> int:
        return len(self.features)

    def level_for_rate(self, rate: int) -> int:
        try:
            return self.rates.index(rate)
        except ValueError:
            raise ScaleAlignmentError(
                f"no segmentation level at downsample rate {rate}; pyramid rates are {self.rates}"
            ) from None

    def detach(self) -> "SegFeaturePyramid":
        return SegFeaturePyramid([f.detach() for f in self.features], list(self.rates))


def _conv_bn_relu(cin: int, cout: int, stride: int = 1) -> list[nn.Module]:
    return [
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    ]


class DoubleConv(nn.Sequential):
    def __init__(self, cin: int, cout: int) -> None:
        super().__init__(*_conv_bn_relu(cin, cout), *_conv_bn_relu(cout, cout))


class UpBlock(nn.Module):
    def __init__(self, cin: int, cskip: int, cout: int) -> None:
        super().__init__()
        self.conv = DoubleConv(cin + cskip, cout)

    def forward(self, x: Tensor, skip: Tensor) -> Tensor:
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv(torch.cat([skip, x], dim=1))


class UNetEncoder(nn.Module):
    def __init__(self, in_channels: int, base: int, depth: int) -> None:
        super().__init__()
        self.depth = depth
        self.inc = DoubleConv(in_channels, base)
        self.downs = nn.ModuleList(
            nn.Sequential(nn.MaxPool2d(2), DoubleConv(base * 2**k, base * 2 ** (k + 1)))
            for k in range(depth)
        )

    def forward(self, x: Tensor) -> list[Tensor]:
        """Encoder outputs at rates ``1, 2, ..., 2**depth``; the last is the bottleneck."""
        div = 2**self.depth
        if x.shape[-2] % div or x.shape[-1] % div:
            raise DivisibilityError(
                f"input size {tuple(x.shape[-2:])} must be divisible by {div}"
            )
        feats = [self.inc(x)]
        for down in self.downs:
            feats.append(down(feats[-1]))
        return feats


class UNetDecoder(nn.Module):
    def __init__(self, base: int, depth: int, num_classes: int) -> None:
        super().__init__()
        # ups[k] produces the rate 2**k output from the rate 2**(k+1) feature
        self.ups = nn.ModuleList(
            UpBlock(base * 2 ** (k + 1), base * 2**k, base * 2**k) for k in range(depth)
        )
        self.outc = nn.Conv2d(base, num_classes, 1)

    def forward(self, encoded: list[Tensor]) -> tuple[Tensor, SegFeaturePyramid]:
        depth = len(self.ups)
        x = encoded[-1]
        decoded = {depth: x}
        for k in reversed(range(depth)):
            x = self.ups[k](x, encoded[k])
            decoded[k] = x
        levels = range(1, depth + 1)
        pyramid = SegFeaturePyramid([decoded[k] for k in levels], [2**k for k in levels])
        return self.outc(x), pyramid


class UNet(nn.Module):
    """Encoder-decoder segmentation network.

    The pyramid holds the decoder-path features at rates ``2, 4, ..., 2**depth``
    (the coarsest being the bottleneck that feeds the decoder), with
    ``base * rate`` channels each.
    """

    def __init__(self, in_channels: int = 3, base: int = 16, depth: int = 4, num_classes: int = 2):
        super().__init__()
        self.encoder = UNetEncoder(in_channels, base, depth)
        self.decoder = UNetDecoder(base, depth, num_classes)
        self.num_classes = num_classes

    @classmethod
    def from_config(cls, cfg: BackboneConfig) -> "UNet":
        return cls(cfg.in_channels, cfg.seg_base_width, cfg.seg_depth, cfg.num_classes)

    def forward(self, image: Tensor) -> tuple[Tensor, SegFeaturePyramid]:
        return self.decoder(self.encoder(image))


class ResidualBlock(nn.Module):
    def __init__(self, channels: int) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + x)


class DiagnosisStage(nn.Module):
    """Residual blocks at ``C`` channels, then channel doubling and 2x max pooling.

    Interaction modules are applied between :attr:`blocks` and :attr:`down`.
    """

    def __init__(self, channels: int, num_blocks: int = 1) -> None:
        super().__init__()
        self.channels = channels
        self.blocks = nn.Sequential(*(ResidualBlock(channels) for _ in range(num_blocks)))
        self.down = nn.Sequential(
            nn.Conv2d(channels, 2 * channels, 1, bias=False),
            nn.BatchNorm2d(2 * channels),
            nn.MaxPool2d(2),
        )

    def forward(self, x: Tensor) -> Tensor:
        return self.down(self.blocks(x))


def diag_stage_forward(x: Tensor, stage: DiagnosisStage) -> Tensor:
    """``(B, C, H, W) -> (B, 2C, H/2, W/2)``."""
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise DivisibilityError(f"stage input spatial size {tuple(x.shape[-2:])} must be even")
    if x.shape[1] != stage.channels:
        raise ShapeMismatchError(f"stage expects {stage.channels} channels, got {x.shape[1]}")
    return stage(x)


class ClassifierHead(nn.Module):
    """Global average pool, then a linear map to one logit per sample."""

    def __init__(self, channels: int) -> None:
        super().__init__()
        self.fc = nn.Linear(channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc(x.mean(dim=(-2, -1))).squeeze(-1)


class Stem(nn.Sequential):
    def __init__(self, in_channels: int, width: int, stride: int) -> None:
        layers = _conv_bn_relu(in_channels, width, stride=min(stride, 2))
        if stride == 4:
            layers.append(nn.MaxPool2d(2))
        super().__init__(*layers)


class DiagnosisNet(nn.Module):
    """Reduced residual classifier: stem, doubling stages, pooled linear head."""

    def __init__(self, cfg: BackboneConfig, in_channels: int | None = None) -> None:
        super().__init__()
        self.in_channels = in_channels or cfg.in_channels
        self.stem = Stem(self.in_channels, cfg.stage_widths[0], cfg.stem_stride)
        self.stages = nn.ModuleList(
            DiagnosisStage(w, n) for w, n in zip(cfg.stage_widths, cfg.blocks_per_stage)
        )
        self.head = ClassifierHead(2 * cfg.stage_widths[-1])

    def forward(self, x: Tensor) -> Tensor:
        x = self.stem(x)
        for stage in self.stages:
            x = diag_stage_forward(x, stage)
        return self.head(x)
