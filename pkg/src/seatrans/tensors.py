"""Spatial-feature and token primitives.

Feature maps are batched and channel-first, ``(B, C, H, W)``. A map element
written ``(h, w, c)`` elsewhere lives at ``x[b, c, h, w]`` here. Token
sequences are ``(B, L, d)`` with tokens in row-major scan order, so token
``t = row * W + col``.
"""

from __future__ import annotations

import torch
from torch import Tensor

from .errors import DivisibilityError, ShapeMismatchError

__all__ = [
    "flatten_to_tokens",
    "tokens_to_feature",
    "pixel_shuffle",
    "pixel_unshuffle",
    "sine_positional_encoding",
]


def flatten_to_tokens(x: Tensor) -> Tensor:
    """``(B, C, H, W)`` feature map to ``(B, H*W, C)`` tokens, row-major."""
    if x.dim() != 4:
        raise ShapeMismatchError(f"expected a (B, C, H, W) map, got shape {tuple(x.shape)}")
    return x.flatten(2).transpose(1, 2)


def tokens_to_feature(tokens: Tensor, height: int, width: int) -> Tensor:
    """Exact inverse of :func:`flatten_to_tokens`."""
    if tokens.dim() != 3:
        raise ShapeMismatchError(f"expected (B, L, d) tokens, got shape {tuple(tokens.shape)}")
    b, length, d = tokens.shape
    if length != height * width:
        raise ShapeMismatchError(
            f"cannot reshape {length} tokens to a {height}x{width} grid"
        )
    return tokens.transpose(1, 2).reshape(b, d, height, width)


def pixel_shuffle(x: Tensor, scale: int) -> Tensor:
    """Rearrange channels into space: ``(B, C, H, W) -> (B, C/s^2, sH, sW)``.

    Output element ``(h, w, c)`` is input element
    ``(h // s, w // s, c*s^2 + s*(h % s) + (w % s))``.
    """
    if scale < 1:
        raise DivisibilityError(f"shuffle factor must be >= 1, got {scale}")
    b, c, h, w = x.shape
    if c % (scale * scale):
        raise DivisibilityError(
            f"channel count {c} is not divisible by shuffle factor squared {scale * scale}"
        )
    out_c = c // (scale * scale)
    x = x.reshape(b, out_c, scale, scale, h, w)
    x = x.permute(0, 1, 4, 2, 5, 3)
    return x.reshape(b, out_c, h * scale, w * scale)


def pixel_unshuffle(x: Tensor, scale: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    b, c, h, w = x.shape
    if h % scale or w % scale:
        raise DivisibilityError(f"spatial size {h}x{w} is not divisible by {scale}")
    x = x.reshape(b, c, h // scale, scale, w // scale, scale)
    x = x.permute(0, 1, 3, 5, 2, 4)
    return x.reshape(b, c * scale * scale, h // scale, w // scale)


def sine_positional_encoding(
    height: int,
    width: int,
    dim: int,
    temperature: float = 10000.0,
    *,
    dtype: torch.dtype = torch.float32,
    device: torch.device | str | None = None,
) -> Tensor:
    """Fixed 2-D sine/cosine encoding of shape ``(height*width, dim)``.

    The first ``dim/2`` channels encode the row index and the last ``dim/2``
    the column index. Within each half, channel ``2k`` is ``sin(p / T^(2k/n))``
    and channel ``2k+1`` the matching cosine, with ``n = dim/2`` and raw
    integer coordinates ``p`` starting at 0.
    """
    if dim % 4:
        raise DivisibilityError(f"positional encoding dim must be divisible by 4, got {dim}")
    half = dim // 2
    # computed in float64, then cast, so every dtype sees the same values
    k = torch.arange(half // 2, dtype=torch.float64)
    freq = temperature ** (2.0 * k / half)
    rows = torch.arange(height, dtype=torch.float64)[:, None] / freq
    cols = torch.arange(width, dtype=torch.float64)[:, None] / freq
    row_enc = torch.stack([rows.sin(), rows.cos()], dim=-1).reshape(height, half)
    col_enc = torch.stack([cols.sin(), cols.cos()], dim=-1).reshape(width, half)
    enc = torch.cat(
        [
            row_enc[:, None, :].expand(height, width, half),
            col_enc[None, :, :].expand(height, width, half),
        ],
        dim=-1,
    )
    return enc.reshape(height * width, dim).to(dtype=dtype, device=device)

