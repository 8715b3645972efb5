"""Grad-CAM heatmaps and overlay rendering."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import NonSpatialLayerError, UnknownLayerError


@dataclass
class Heatmap:
    values: np.ndarray  # (H, W) in [0, 1]
    layer: str


def _score(output) -> Tensor:
    logit = getattr(output, "logit", output)
    return logit.sum()


def grad_cam(model: nn.Module, image: Tensor, target_layer: str | None = None) -> Heatmap:
    """Grad-CAM for the model's disease logit on a single ``(3, H, W)`` or ``(1, 3, H, W)`` image.

    Channel weights are the spatial mean of the score gradient; the map is
    ``ReLU(sum_c w_c A_c)``, bilinearly resized to the image and max-normalized.
    Parameters are never updated and their ``.grad`` fields are left untouched.
    """
    if image.dim() == 3:
        image = image[None]
    target_layer = target_layer or getattr(model, "default_cam_layer", None)
    modules = dict(model.named_modules())
    if target_layer not in modules:
        raise UnknownLayerError(f"no layer named {target_layer!r}")

    captured: dict[str, Tensor] = {}

    def hook(_module, _inputs, output):
        if isinstance(output, Tensor):
            captured["act"] = output
            if output.requires_grad:
                output.retain_grad()

    was_training = model.training
    saved_grads = {n: p.grad for n, p in model.named_parameters()}
    handle = modules[target_layer].register_forward_hook(hook)
    model.eval()
    try:
        with torch.enable_grad():
            # input needs grad so activations join the graph even with frozen layers
            output = model(image.detach().clone().requires_grad_(True))
            act = captured.get("act")
            if act is None or act.dim() != 4:
                shape = None if act is None else tuple(act.shape)
                raise NonSpatialLayerError(
                    f"layer {target_layer!r} output {shape} is not a (B, C, H, W) feature map"
                )
            score = _score(output)
            if act.requires_grad and score.requires_grad:
                (grad,) = torch.autograd.grad(score, act, allow_unused=True)
            else:
                grad = None
            if grad is None:
                grad = torch.zeros_like(act)
    finally:
        handle.remove()
        model.train(was_training)
        for n, p in model.named_parameters():
            p.grad = saved_grads[n]

    weights = grad.mean(dim=(-2, -1), keepdim=True)
    cam = F.relu((weights * act.detach()).sum(dim=1, keepdim=True))
    cam = F.interpolate(cam, size=image.shape[-2:], mode="bilinear", align_corners=False)[0, 0]
    cam = cam.clamp_min(0).double()
    peak = cam.max()
    values = (cam / peak).numpy() if peak > 0 else np.zeros(tuple(cam.shape))
    return Heatmap(values, target_layer)


def overlay(image: np.ndarray, heatmap: Heatmap, alpha: float = 0.5, cmap: str = "viridis") -> np.ndarray:
    """Blend an ``(H, W, 3)`` image in [0, 1] with the colormapped heatmap; returns uint8."""
    from matplotlib import colormaps

    colors = colormaps[cmap](heatmap.values)[..., :3]
    blended = (1.0 - alpha) * np.clip(image, 0.0, 1.0) + alpha * colors
    return np.clip(np.rint(blended * 255.0), 0, 255).astype(np.uint8)
