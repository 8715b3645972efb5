"""Losses, the Adam training loop, segmentation pretraining and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbones import UNet
from .config import TrainConfig
from .data import ArrayDataset
from .errors import EmptyDatasetError, TrainingDivergedError
from .metrics import MetricsReport, compute_metrics, dice_score

logger = logging.getLogger(__name__)

BCE_EPS = 1e-7


def bce_loss(prob: Tensor, label: Tensor, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy on probabilities clamped to ``[eps, 1 - eps]``."""
    p = prob.clamp(eps, 1.0 - eps)
    label = label.to(p.dtype)
    return -(label * torch.log(p) + (1.0 - label) * torch.log1p(-p)).mean()


def dice_loss(mask_logits: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    """``1 - soft Dice``, averaged over samples and classes."""
    probs = torch.sigmoid(mask_logits)
    dims = (-2, -1)
    inter = (probs * target).sum(dims)
    total = probs.sum(dims) + target.sum(dims)
    return (1.0 - (2.0 * inter + smooth) / (total + smooth)).mean()


def segmentation_loss(mask_logits: Tensor, target: Tensor) -> Tensor:
    return F.binary_cross_entropy_with_logits(mask_logits, target) + dice_loss(mask_logits, target)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    steps: int
    val: MetricsReport | None = None

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "loss": self.loss,
            "steps": self.steps,
            "val": None if self.val is None else self.val.to_dict(),
        }


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    steps: int = 0

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.history]


def _batches(n: int, batch_size: int, generator: torch.Generator):
    order = torch.randperm(n, generator=generator)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _check_finite(loss: Tensor, epoch: int, step: int) -> None:
    if not torch.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss.item()} at epoch {epoch}, step {step}; "
            "try a lower learning rate"
        )


def train(
    model: nn.Module,
    dataset: ArrayDataset,
    config: TrainConfig,
    val: ArrayDataset | None = None,
) -> TrainResult:
    """Train ``model`` in place with Adam on BCE (plus Dice when the mask branch is trainable).

    Batch order and any stochastic layers are driven by ``config.seed``.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    torch.manual_seed(config.seed)
    if hasattr(model, "set_segmentation_frozen"):
        model.set_segmentation_frozen(config.freeze_segmentation)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        params, lr=config.learning_rate, betas=config.betas, eps=config.adam_eps
    )
    generator = torch.Generator().manual_seed(config.seed)
    result = TrainResult()
    for epoch in range(1, config.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for index in _batches(len(dataset), config.batch_size, generator):
            batch = dataset.subset(index)
            out = model(batch.images)
            loss = bce_loss(out.prob, batch.labels)
            if (
                batch.masks is not None
                and out.mask_logits is not None
                and out.mask_logits.requires_grad
            ):
                loss = loss + config.seg_loss_weight * dice_loss(out.mask_logits, batch.masks)
            _check_finite(loss, epoch, result.steps)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            result.steps += 1
            total += loss.item() * len(index)
            count += len(index)
            if config.max_steps is not None and result.steps >= config.max_steps:
                break
        record = EpochRecord(epoch, total / count, result.steps)
        if val is not None and len(val):
            record.val = evaluate(model, val)
        result.history.append(record)
        logger.debug("epoch %d loss %.5f", epoch, record.loss)
        if config.max_steps is not None and result.steps >= config.max_steps:
            break
    model.eval()
    return result


def train_segmentation(unet: UNet, dataset: ArrayDataset, config: TrainConfig) -> TrainResult:
    """Pretrain a UNet on the dataset's masks with BCE + Dice."""
    if len(dataset) == 0 or dataset.masks is None:
        raise EmptyDatasetError("segmentation pretraining needs a dataset with masks")
    torch.manual_seed(config.seed)
    unet.requires_grad_(True)
    optimizer = torch.optim.Adam(
        unet.parameters(), lr=config.learning_rate, betas=config.betas, eps=config.adam_eps
    )
    generator = torch.Generator().manual_seed(config.seed)
    result = TrainResult()
    for epoch in range(1, config.epochs + 1):
        unet.train()
        total, count = 0.0, 0
        for index in _batches(len(dataset), config.batch_size, generator):
            batch = dataset.subset(index)
            mask_logits, _ = unet(batch.images)
            loss = segmentation_loss(mask_logits, batch.masks)
            _check_finite(loss, epoch, result.steps)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            result.steps += 1
            total += loss.item() * len(index)
            count += len(index)
            if config.max_steps is not None and result.steps >= config.max_steps:
                break
        result.history.append(EpochRecord(epoch, total / count, result.steps))
        if config.max_steps is not None and result.steps >= config.max_steps:
            break
    unet.eval()
    return result


@torch.no_grad()
def predict(model: nn.Module, dataset: ArrayDataset, batch_size: int = 64) -> tuple[np.ndarray, Tensor | None]:
    """Disease probabilities and (if the model segments) mask logits, in eval mode."""
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    was_training = model.training
    model.eval()
    probs, masks = [], []
    try:
        for start in range(0, len(dataset), batch_size):
            out = model(dataset.images[start:start + batch_size])
            probs.append(out.prob.double().cpu())
            if out.mask_logits is not None:
                masks.append(out.mask_logits.cpu())
    finally:
        model.train(was_training)
    return torch.cat(probs).numpy(), (torch.cat(masks) if masks else None)


def evaluate(model: nn.Module, dataset: ArrayDataset, threshold: float = 0.5) -> MetricsReport:
    """Metrics over the whole dataset; per-class Dice is the mean over images."""
    probs, mask_logits = predict(model, dataset)
    report = compute_metrics(probs, dataset.labels.numpy(), threshold)
    if mask_logits is not None and dataset.masks is not None:
        report.dice = _mean_dice(mask_logits, dataset.masks)
    return report


def segmentation_dice(unet: UNet, dataset: ArrayDataset) -> list[float]:
    """Per-class mean Dice of a bare UNet."""
    unet.eval()
    with torch.no_grad():
        logits = torch.cat([unet(dataset.images[s:s + 64])[0] for s in range(0, len(dataset), 64)])
    return _mean_dice(logits, dataset.masks)


def _mean_dice(mask_logits: Tensor, masks: Tensor) -> list[float]:
    pred = (torch.sigmoid(mask_logits) >= 0.5).numpy()
    gt = masks.numpy() >= 0.5
    return [
        float(np.mean([dice_score(pred[i, k], gt[i, k]) for i in range(len(pred))]))
        for k in range(pred.shape[1])
    ]

