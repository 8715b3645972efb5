"""End-to-end runs shared by the command line and the acceptance suite.

Every run follows the same recipe: build standardized splits, pretrain the
segmentation UNet on the training split, then train each diagnosis model with
that UNet frozen and score it on the test split.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Iterable

import torch
from torch import nn

from .backbones import UNet
from .baselines import build_model, model_kind_config
from .checkpoint import weights_digest
from .config import ABLATION_ROWS, BackboneConfig, DataConfig, RunConfig, SeATransConfig, TrainConfig
from .data import SPLITS, ArrayDataset, ChannelStats, load_dataset, materialize, synthetic_splits
from .errors import ConfigError, EmptyDatasetError
from .metrics import MetricsReport
from .model import ablation_config, seeded
from .training import TrainResult, evaluate, segmentation_dice, train, train_segmentation

logger = logging.getLogger(__name__)

COMPARE_KINDS = ("vanilla", "cat", "multi", "roi", "seatrans")


@dataclass
class PreparedData:
    """Splits standardized with the training split's channel statistics."""

    splits: dict[str, ArrayDataset]
    stats: ChannelStats

    def __getitem__(self, split: str) -> ArrayDataset:
        try:
            return self.splits[split]
        except KeyError:
            raise EmptyDatasetError(f"no {split!r} split; have {sorted(self.splits)}") from None

    def get(self, split: str) -> ArrayDataset | None:
        return self.splits.get(split)


def prepare_data(cfg: DataConfig, backbone: BackboneConfig, seed: int = 0) -> PreparedData:
    size = cfg.image_size or backbone.input_size[0]
    if cfg.manifest:
        samples = load_dataset(cfg.manifest)
        raw = {
            split: materialize([s for s in samples if s.split == split], size, backbone.num_classes)
            for split in SPLITS
            if any(s.split == split for s in samples)
        }
    elif cfg.preset:
        raw = {
            split: ds.to_arrays()
            for split, ds in synthetic_splits(
                cfg.preset, cfg.n_train, cfg.n_val, cfg.n_test, size, seed
            ).items()
        }
    else:
        raise ConfigError("data config needs either a manifest or a synthetic preset")
    if "train" not in raw:
        raise EmptyDatasetError("dataset has no training split")
    stats = ChannelStats.from_images(raw["train"].images)
    return PreparedData({k: v.standardized(stats) for k, v in raw.items()}, stats)


def pretrain_segmentation(
    backbone: BackboneConfig, data: ArrayDataset, cfg: TrainConfig, seed: int = 0
) -> UNet:
    with seeded(seed + 1):
        unet = UNet.from_config(backbone)
    t0 = time.perf_counter()
    train_segmentation(unet, data, dataclasses.replace(cfg, seed=seed))
    logger.info("segmentation pretraining took %.1fs", time.perf_counter() - t0)
    return unet


def segmentation_state(unet: UNet | None) -> dict[str, torch.Tensor] | None:
    return None if unet is None else {k: v.clone() for k, v in unet.state_dict().items()}


@dataclass
class FitResult:
    model: nn.Module
    history: TrainResult
    test: MetricsReport | None
    seconds: float

    @property
    def num_params(self) -> int:
        return sum(p.numel() for p in self.model.parameters())


def fit_model(
    model_cfg: SeATransConfig,
    data: PreparedData,
    train_cfg: TrainConfig,
    seed: int = 0,
    seg_state: dict[str, torch.Tensor] | None = None,
) -> FitResult:
    """Build, train and test one model. ``seg_state`` initializes its segmentation branch."""
    model = build_model(model_cfg, seed=seed)
    if seg_state is not None and getattr(model, "segmentation", None) is not None:
        model.segmentation.load_state_dict(seg_state)
    t0 = time.perf_counter()
    history = train(model, data["train"], dataclasses.replace(train_cfg, seed=seed), val=data.get("val"))
    seconds = time.perf_counter() - t0
    test = evaluate(model, data["test"]) if data.get("test") is not None else None
    return FitResult(model, history, test, seconds)


# ---------------------------------------------------------------- ablation


@dataclass
class AblationRow:
    seed: int
    flags: tuple[bool, bool, bool]
    auc: float
    acc: float
    sen: float
    spe: float
    params: int
    seconds: float

    def to_dict(self) -> dict[str, Any]:
        multi_scale, asymmetric, sea = self.flags
        d = dataclasses.asdict(self)
        del d["flags"]
        return {"seed": self.seed, "multi_scale": multi_scale, "asymmetric": asymmetric,
                "sea_block": sea, **{k: v for k, v in d.items() if k != "seed"}}


def run_ablation(
    run: RunConfig,
    seeds: Iterable[int] = (0,),
    rows: Iterable[tuple[bool, bool, bool]] = ABLATION_ROWS,
) -> list[AblationRow]:
    rows = list(rows)
    out = []
    for seed in seeds:
        data = prepare_data(run.data, run.model.backbone, seed)
        unet = pretrain_segmentation(run.model.backbone, data["train"], run.seg_train, seed)
        state = segmentation_state(unet)
        for flags in rows:
            fit = fit_model(ablation_config(flags, run.model), data, run.train, seed, state)
            out.append(AblationRow(
                seed, tuple(flags), fit.test.auc, fit.test.acc, fit.test.sen, fit.test.spe,
                fit.num_params, fit.seconds,
            ))
            logger.info("seed %d flags %s auc %.4f", seed, flags, fit.test.auc)
    return out


def full_vs_vanilla_wins(rows: list[AblationRow]) -> tuple[int, int]:
    """``(seeds where the full model's AUC >= vanilla's, seeds compared)``."""
    by_seed: dict[int, dict[tuple, float]] = {}
    for r in rows:
        by_seed.setdefault(r.seed, {})[r.flags] = r.auc
    pairs = [
        (aucs[ABLATION_ROWS[3]], aucs[ABLATION_ROWS[0]])
        for aucs in by_seed.values()
        if ABLATION_ROWS[0] in aucs and ABLATION_ROWS[3] in aucs
    ]
    return sum(full >= vanilla for full, vanilla in pairs), len(pairs)


# ---------------------------------------------------------------- comparison


@dataclass
class CompareRow:
    kind: str
    metrics: MetricsReport
    params: int
    seconds: float

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": self.params, "seconds": self.seconds, **self.metrics.to_dict()}


def run_compare(run: RunConfig, kinds: Iterable[str] = COMPARE_KINDS) -> list[CompareRow]:
    data = prepare_data(run.data, run.model.backbone, run.seed)
    unet = pretrain_segmentation(run.model.backbone, data["train"], run.seg_train, run.seed)
    state = segmentation_state(unet)
    rows = []
    for kind in kinds:
        cfg = model_kind_config(run.model, kind)
        if kind == "seatrans" and cfg.flags != ABLATION_ROWS[3]:
            cfg = ablation_config(ABLATION_ROWS[3], cfg)
        fit = fit_model(cfg, data, run.train, run.seed, state)
        rows.append(CompareRow(kind, fit.test, fit.num_params, fit.seconds))
    return rows


# ---------------------------------------------------------------- segmentation swap


def frozen_segmentation_step_check(model: nn.Module, data: ArrayDataset, cfg: TrainConfig) -> bool:
    """True when one optimizer step leaves the frozen segmentation weights bit-identical."""
    seg = getattr(model, "segmentation", None)
    if seg is None:
        return True
    before = weights_digest(seg)
    step_cfg = dataclasses.replace(cfg, max_steps=1, epochs=1, freeze_segmentation=True)
    train(model, data.subset(torch.arange(min(len(data), cfg.batch_size))), step_cfg)
    return weights_digest(seg) == before


@dataclass
class HeteroResult:
    target_preset: str
    source_presets: tuple[str, str]
    auc: dict[str, float]
    seg_dice_on_target: dict[str, list[float]]
    frozen_invariant: bool
    seconds: float

    @property
    def auc_change(self) -> float:
        a, b = self.source_presets
        return self.auc[b] - self.auc[a]

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["source_presets"] = list(self.source_presets)
        d["auc_change"] = self.auc_change
        return d


def run_hetero(run: RunConfig, source_presets: tuple[str, str] = ("synthetic-a", "synthetic-b")) -> HeteroResult:
    """Train the full model on the run's data with the UNet pretrained on each source preset.

    The first source should match the target data; the second is the swapped-in
    checkpoint, so ``auc_change`` is the cost (or gain) of the swap.
    """
    if run.data.manifest is None and run.data.preset is None:
        raise ConfigError("hetero run needs a target dataset")
    t0 = time.perf_counter()
    target = prepare_data(run.data, run.model.backbone, run.seed)
    cfg = ablation_config(ABLATION_ROWS[3], dataclasses.replace(run.model, kind="seatrans"))
    auc, dice = {}, {}
    invariant = True
    for preset in source_presets:
        if run.data.manifest is None and preset == run.data.preset:
            source = target
        else:
            source = prepare_data(
                dataclasses.replace(run.data, manifest=None, preset=preset),
                run.model.backbone, run.seed,
            )
        unet = pretrain_segmentation(run.model.backbone, source["train"], run.seg_train, run.seed)
        dice[preset] = segmentation_dice(unet, target["test"])
        fit = fit_model(cfg, target, run.train, run.seed, segmentation_state(unet))
        auc[preset] = fit.test.auc
        invariant &= weights_digest(fit.model.segmentation) == weights_digest(unet)
        invariant &= frozen_segmentation_step_check(fit.model, target["train"], run.train)
    return HeteroResult(
        run.data.preset or str(run.data.manifest), tuple(source_presets), auc, dice,
        bool(invariant), time.perf_counter() - t0,
    )


@dataclass
class OverfitResult:
    train_auc: float
    steps: int
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def run_overfit(run: RunConfig, max_steps: int = 200) -> OverfitResult:
    """Train the configured model on the training split only and score it on that split."""
    data = prepare_data(dataclasses.replace(run.data, n_val=0, n_test=0), run.model.backbone, run.seed)
    t0 = time.perf_counter()
    unet = pretrain_segmentation(run.model.backbone, data["train"], run.seg_train, run.seed)
    cfg = dataclasses.replace(run.train, max_steps=max_steps)
    fit = fit_model(run.model, data, cfg, run.seed, segmentation_state(unet))
    report = evaluate(fit.model, data["train"])
    return OverfitResult(report.auc, fit.history.steps, fit.history.losses, time.perf_counter() - t0)
