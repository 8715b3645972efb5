"""Multi-head dot-product attention and the post-norm transformer sublayer."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import DivisibilityError, NonFiniteError, ShapeMismatchError


def _xavier_linear(in_features: int, out_features: int) -> nn.Linear:
    layer = nn.Linear(in_features, out_features)
    nn.init.xavier_normal_(layer.weight)
    nn.init.zeros_(layer.bias)
    return layer


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention over ``num_heads`` heads.

    Each head sees a ``dim / num_heads`` slice of the projected query, key and
    value; head outputs are concatenated and mixed by one output projection.
    """

    def __init__(self, dim: int, num_heads: int = 4, dropout: float = 0.0) -> None:
        super().__init__()
        if dim % num_heads:
            raise DivisibilityError(f"model dim {dim} is not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q_proj = _xavier_linear(dim, dim)
        self.k_proj = _xavier_linear(dim, dim)
        self.v_proj = _xavier_linear(dim, dim)
        self.out_proj = _xavier_linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: Tensor) -> Tensor:
        b, length, _ = x.shape
        return x.view(b, length, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(
        self, query: Tensor, key: Tensor, value: Tensor, return_weights: bool = False
    ) -> Tensor | tuple[Tensor, Tensor]:
        for name, t in (("query", query), ("key", key), ("value", value)):
            if t.dim() != 3 or t.shape[-1] != self.dim:
                raise ShapeMismatchError(
                    f"{name} must be (B, L, {self.dim}), got {tuple(t.shape)}"
                )
        if key.shape[:2] != value.shape[:2] or query.shape[0] != key.shape[0]:
            raise ShapeMismatchError(
                f"incompatible query/key/value shapes {tuple(query.shape)}, "
                f"{tuple(key.shape)}, {tuple(value.shape)}"
            )
        if not all(torch.isfinite(t).all() for t in (query, key, value)):
            raise NonFiniteError("attention inputs contain non-finite values")

        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(key))
        v = self._split(self.v_proj(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = F.softmax(scores, dim=-1)
        out = self.dropout(weights) @ v
        b, _, length, _ = out.shape
        out = self.out_proj(out.transpose(1, 2).reshape(b, length, self.dim))
        if return_weights:
            return out, weights
        return out


class TransformerSublayer(nn.Module):
    """``y = LN(x + attended)``, then ``out = LN(y + MLP(y))``."""

    def __init__(
        self, dim: int, mlp_ratio: int = 4, dropout: float = 0.0, eps: float = 1e-5
    ) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=eps)
        self.norm2 = nn.LayerNorm(dim, eps=eps)
        self.mlp = nn.Sequential(
            _xavier_linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Dropout(dropout),
            _xavier_linear(dim * mlp_ratio, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x: Tensor, attended: Tensor) -> Tensor:
        if x.shape != attended.shape:
            raise ShapeMismatchError(
                f"residual shape {tuple(x.shape)} != attended shape {tuple(attended.shape)}"
            )
        y = self.norm1(x + attended)
        return self.norm2(y + self.mlp(y))


class AttentionLayer(nn.Module):
    """One attention stage: MHA followed by the sublayer, residual taken from the query."""

    def __init__(self, dim: int, num_heads: int = 4, mlp_ratio: int = 4, dropout: float = 0.0):
        super().__init__()
        self.attn = MultiHeadAttention(dim, num_heads, dropout)
        self.sublayer = TransformerSublayer(dim, mlp_ratio, dropout)

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        query_pos: Tensor | None = None,
        key_pos: Tensor | None = None,
    ) -> Tensor:
        q = query if query_pos is None else query + query_pos
        k = key if key_pos is None else key + key_pos
        return self.sublayer(query, self.attn(q, k, value))
