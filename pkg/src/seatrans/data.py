"""Datasets: manifest ingestion, the synthetic cup-to-disc generator, and tensor packing.

Manifest files are CSV with a header row ``image,mask,label,split``; paths
are relative to the manifest's directory and ``mask`` may be empty. Masks are
PNGs whose first ``K`` channels are the class masks (``L`` for one class,
``RGB`` with red = disc and green = cup for two).
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torch import Tensor

from .errors import (
    ConfigError,
    EmptyDatasetError,
    ImageDecodeError,
    LabelError,
    MaskSizeMismatchError,
    MissingFileError,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_COLUMNS = ("image", "mask", "label", "split")


@dataclass(frozen=True)
class DatasetSample:
    image_path: Path
    mask_path: Path | None
    label: int
    split: str


@dataclass
class ArrayDataset:
    """In-memory dataset: ``images (N, 3, H, W)`` float, ``masks (N, K, H, W)`` in {0, 1}."""

    images: Tensor
    labels: Tensor
    masks: Tensor | None = None

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")
        if self.masks is not None and (
            len(self.masks) != len(self.images) or self.masks.shape[-2:] != self.images.shape[-2:]
        ):
            raise MaskSizeMismatchError("masks must match images in count and spatial size")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, index) -> "ArrayDataset":
        return ArrayDataset(
            self.images[index],
            self.labels[index],
            None if self.masks is None else self.masks[index],
        )

    def standardized(self, stats: "ChannelStats") -> "ArrayDataset":
        return replace(self, images=stats.apply(self.images))

    def to(self, dtype: torch.dtype) -> "ArrayDataset":
        return ArrayDataset(
            self.images.to(dtype),
            self.labels.to(dtype),
            None if self.masks is None else self.masks.to(dtype),
        )


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean and std used to standardize images."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    @classmethod
    def from_images(cls, images: Tensor) -> "ChannelStats":
        flat = images.transpose(0, 1).reshape(images.shape[1], -1).double()
        std = flat.std(dim=1).clamp_min(1e-6)
        return cls(tuple(flat.mean(dim=1).tolist()), tuple(std.tolist()))

    def apply(self, images: Tensor) -> Tensor:
        mean = torch.tensor(self.mean, dtype=images.dtype).view(1, -1, 1, 1)
        std = torch.tensor(self.std, dtype=images.dtype).view(1, -1, 1, 1)
        return (images - mean) / std


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    """Fundus-like images whose label is the vertical cup-to-disc ratio rule.

    Disc radius is a fraction of the image size; the cup's vertical extent is
    ``cup ratio * disc extent``. A sample is positive when the vCDR measured on
    its own rasterized masks exceeds ``threshold``.
    """

    n_samples: int = 128
    image_size: int = 32
    disc_radius: tuple[float, float] = (0.2, 0.32)
    cup_ratio: tuple[float, float] = (0.3, 0.95)
    threshold: float = 0.7
    noise: float = 0.08
    preset: str = "synthetic-a"
    seed: int = 0

    def validate(self) -> None:
        lo, hi = self.cup_ratio
        if not 0.0 < lo < hi < 1.0:
            raise ConfigError(f"cup ratio range {self.cup_ratio} must lie inside (0, 1)")
        if not lo < self.threshold < hi:
            raise ConfigError(
                f"threshold {self.threshold} outside cup ratio range {self.cup_ratio}: "
                "one class could never occur"
            )
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown synthetic preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.n_samples < 1 or self.image_size < 8:
            raise ConfigError("need n_samples >= 1 and image_size >= 8")


@dataclass(frozen=True)
class _Style:
    background: tuple[float, float, float]
    disc: tuple[float, float, float]
    cup: tuple[float, float, float]
    noise_scale: float
    stripes: float


# preset B differs in background texture and intensity statistics
PRESETS = {
    "synthetic-a": _Style((0.55, 0.20, 0.10), (0.88, 0.62, 0.30), (0.96, 0.74, 0.42), 1.0, 0.0),
    "synthetic-b": _Style((0.30, 0.28, 0.22), (0.70, 0.58, 0.38), (0.78, 0.68, 0.48), 1.3, 0.12),
}


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (N, H, W, 3) uint8
    masks: np.ndarray  # (N, H, W, 2) uint8, disc then cup
    labels: np.ndarray  # (N,) int64
    cup_ratios: np.ndarray  # (N,) sampled vertical ratio

    def __len__(self) -> int:
        return len(self.labels)

    def to_arrays(self) -> ArrayDataset:
        return ArrayDataset(
            torch.from_numpy(self.images).permute(0, 3, 1, 2).float() / 255.0,
            torch.from_numpy(self.labels).float(),
            torch.from_numpy(self.masks).permute(0, 3, 1, 2).float(),
        )

    def slice(self, start: int, stop: int) -> "SyntheticDataset":
        return SyntheticDataset(
            self.images[start:stop], self.masks[start:stop],
            self.labels[start:stop], self.cup_ratios[start:stop],
        )


def vcdr_label(ratio: float, threshold: float = 0.7) -> int:
    return int(ratio > threshold)


def vertical_extent(mask: np.ndarray) -> int:
    rows = np.flatnonzero(np.asarray(mask).any(axis=1))
    return 0 if rows.size == 0 else int(rows[-1] - rows[0] + 1)


def mask_vcdr(disc: np.ndarray, cup: np.ndarray) -> float:
    """Vertical cup diameter over vertical disc diameter, measured in rows."""
    return vertical_extent(cup) / vertical_extent(disc)


def _ellipse(size: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _render(cfg: SyntheticConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, float]:
    size = cfg.image_size
    style = PRESETS[cfg.preset]
    cy, cx = size / 2 + rng.uniform(-0.08, 0.08, size=2) * size
    ry = rng.uniform(*cfg.disc_radius) * size
    rx = ry * rng.uniform(0.85, 1.15)
    ratio = rng.uniform(*cfg.cup_ratio)
    # horizontal cup extent is drawn independently so cup area alone does not give the label
    ratio_x = rng.uniform(*cfg.cup_ratio)
    disc = _ellipse(size, cy, cx, ry, rx)
    cup = _ellipse(size, cy, cx, ratio * ry, ratio_x * rx) & disc

    yy, xx = np.mgrid[0:size, 0:size] / size
    vignette = 1.0 - 0.6 * ((yy - 0.5) ** 2 + (xx - 0.5) ** 2)
    img = np.asarray(style.background)[None, None, :] * vignette[..., None]
    if style.stripes:
        phase = rng.uniform(0, 2 * np.pi)
        img = img + style.stripes * np.sin(2 * np.pi * 6 * (xx + 0.5 * yy) + phase)[..., None]
    img = np.where(disc[..., None], np.asarray(style.disc), img)
    img = np.where(cup[..., None], np.asarray(style.cup), img)
    img = img + rng.normal(0.0, cfg.noise * style.noise_scale, size=img.shape)
    img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    mask = np.stack([disc, cup], axis=-1).astype(np.uint8)
    return img, mask, ratio


MAX_RESAMPLES = 100


def generate_synthetic(cfg: SyntheticConfig) -> SyntheticDataset:
    """Pure function of ``cfg``; redraws the whole set until class balance is in [0.3, 0.7]."""
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(MAX_RESAMPLES)
    for attempt_seed in seeds:
        rng = np.random.default_rng(attempt_seed)
        images, masks, ratios, labels = [], [], [], []
        for _ in range(cfg.n_samples):
            img, mask, ratio = _render(cfg, rng)
            images.append(img)
            masks.append(mask)
            ratios.append(ratio)
            labels.append(int(mask_vcdr(mask[..., 0], mask[..., 1]) > cfg.threshold))
        balance = float(np.mean(labels))
        if 0.3 <= balance <= 0.7 or cfg.n_samples < 4:
            return SyntheticDataset(
                np.stack(images), np.stack(masks),
                np.asarray(labels, dtype=np.int64), np.asarray(ratios),
            )
    raise ConfigError(f"could not reach class balance in [0.3, 0.7] for {cfg}")


def write_dataset(ds: SyntheticDataset, out_dir: str | Path, splits: list[str]) -> Path:
    """Write PNG images and masks plus ``manifest.csv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for i in range(len(ds)):
            name = f"{i:05d}.png"
            Image.fromarray(ds.images[i]).save(out / "images" / name)
            mask = ds.masks[i] * 255
            rgb = np.concatenate([mask, np.zeros_like(mask[..., :1])], axis=-1)
            Image.fromarray(rgb.astype(np.uint8)).save(out / "masks" / name)
            writer.writerow([f"images/{name}", f"masks/{name}", int(ds.labels[i]), splits[i]])
    return manifest


def split_names(n_train: int, n_val: int, n_test: int) -> list[str]:
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def synthetic_splits(
    preset: str, n_train: int, n_val: int, n_test: int, image_size: int = 32, seed: int = 0
) -> dict[str, SyntheticDataset]:
    total = n_train + n_val + n_test
    ds = generate_synthetic(
        SyntheticConfig(n_samples=total, image_size=image_size, preset=preset, seed=seed)
    )
    bounds = np.cumsum([0, n_train, n_val, n_test])
    return {
        name: ds.slice(int(bounds[i]), int(bounds[i + 1]))
        for i, name in enumerate(SPLITS)
        if bounds[i + 1] > bounds[i]
    }


# ---------------------------------------------------------------- manifests


def _open_image(path: Path, row: int) -> Image.Image:
    if not path.is_file():
        raise MissingFileError(f"row {row}: file not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageDecodeError(f"row {row}: cannot decode {path}: {exc}") from exc
    return img


def load_dataset(manifest_file: str | Path) -> list[DatasetSample]:
    """Parse and validate a manifest; every referenced file is opened once."""
    manifest_file = Path(manifest_file)
    if not manifest_file.is_file():
        raise MissingFileError(f"manifest not found: {manifest_file}")
    root = manifest_file.parent
    samples = []
    with manifest_file.open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"manifest {manifest_file} lacks columns {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            label_text = (row["label"] or "").strip()
            if label_text not in ("0", "1"):
                raise LabelError(f"row {row_no}: label must be 0 or 1, got {label_text!r}")
            split = (row["split"] or "").strip()
            if split not in SPLITS:
                raise LabelError(f"row {row_no}: split must be one of {SPLITS}, got {split!r}")
            image_path = root / row["image"].strip()
            image = _open_image(image_path, row_no)
            mask_path = None
            if (row["mask"] or "").strip():
                mask_path = root / row["mask"].strip()
                mask = _open_image(mask_path, row_no)
                if mask.size != image.size:
                    raise MaskSizeMismatchError(
                        f"row {row_no}: mask size {mask.size} != image size {image.size}"
                    )
            samples.append(DatasetSample(image_path, mask_path, int(label_text), split))
    counts = Counter(s.split for s in samples)
    logger.info("loaded %d samples from %s: %s", len(samples), manifest_file, dict(counts))
    return samples


def split_counts(samples: list[DatasetSample]) -> dict[str, int]:
    counts = Counter(s.split for s in samples)
    return {split: counts.get(split, 0) for split in SPLITS}


def materialize(
    samples: list[DatasetSample], image_size: int = 256, num_classes: int = 2
) -> ArrayDataset:
    """Decode and resize samples: bilinear for images, nearest-neighbour for masks."""
    if not samples:
        raise EmptyDatasetError("no samples to materialize")
    size = (image_size, image_size)
    images, masks, labels = [], [], []
    with_masks = all(s.mask_path is not None for s in samples)
    for s in samples:
        img = Image.open(s.image_path).convert("RGB").resize(size, Image.BILINEAR)
        images.append(np.asarray(img, dtype=np.float32) / 255.0)
        labels.append(s.label)
        if with_masks:
            m = Image.open(s.mask_path)
            m = m.convert("L" if num_classes == 1 else "RGB").resize(size, Image.NEAREST)
            arr = np.asarray(m, dtype=np.float32).reshape(image_size, image_size, -1)
            masks.append((arr[..., :num_classes] >= 128).astype(np.float32))
    return ArrayDataset(
        torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).contiguous(),
        torch.tensor(labels, dtype=torch.float32),
        torch.from_numpy(np.stack(masks)).permute(0, 3, 1, 2).contiguous() if with_masks else None,
    )
