"""Small purpose-built models shared by the Grad-CAM tests and the acceptance gate."""

import torch
from torch import nn

from seatrans.model import ModelOutput
from seatrans.training import bce_loss


class QuadrantNet(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 3, padding=1), nn.ReLU(), nn.Conv2d(8, 8, 3, padding=1), nn.ReLU()
        )
        self.fc = nn.Linear(8, 1)

    default_cam_layer = "features"

    def forward(self, x):
        return ModelOutput(self.fc(self.features(x).mean(dim=(-2, -1))).squeeze(-1))


def quadrant_images(n: int, size: int = 32, seed: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    """Noise images; positives carry a bright square somewhere in the top-left quadrant."""
    g = torch.Generator().manual_seed(seed)
    images = 0.1 * torch.randn(n, 3, size, size, generator=g)
    labels = (torch.arange(n) % 2).float()
    half = size // 2
    for i in range(n):
        if labels[i]:
            r, c = torch.randint(0, half - 6, (2,), generator=g).tolist()
            images[i, :, r:r + 6, c:c + 6] += 1.0
    return images, labels


def trained_quadrant_net(steps: int = 150, seed: int = 0) -> QuadrantNet:
    torch.manual_seed(seed)
    net = QuadrantNet()
    images, labels = quadrant_images(64, seed=seed)
    opt = torch.optim.Adam(net.parameters(), lr=1e-2)
    for _ in range(steps):
        loss = bce_loss(net(images).prob, labels)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return net.eval()


def quadrant_mass(values, size: int = 32) -> float:
    total = float(values.sum())
    return float(values[: size // 2, : size // 2].sum()) / total if total > 0 else 0.0
