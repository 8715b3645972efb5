"""Segmentation-assisted attention block.

The encoder lets segmentation tokens query the diagnosis tokens, producing an
embedding of the diagnosis feature organised by segmentation affinity. The
decoder maps that embedding back by letting the diagnosis tokens query it, and
a self-attention stage refines the result. Output has the diagnosis feature's
exact shape.
"""

from __future__ import annotations

from torch import Tensor, nn

from .attention import AttentionLayer, _xavier_linear
from .errors import ShapeMismatchError
from .tensors import flatten_to_tokens, sine_positional_encoding, tokens_to_feature

MAX_ATTENTION_DIM = 256


def attention_dim(diag_channels: int) -> int:
    return min(diag_channels, MAX_ATTENTION_DIM)


class SeABlock(nn.Module):
    def __init__(
        self,
        seg_channels: int,
        diag_channels: int,
        dim: int | None = None,
        num_heads: int = 4,
        depth: int = 1,
        mlp_ratio: int = 4,
        dropout: float = 0.0,
    ) -> None:
        super().__init__()
        self.seg_channels = seg_channels
        self.diag_channels = diag_channels
        self.dim = dim = dim or attention_dim(diag_channels)
        self.seg_proj = _xavier_linear(seg_channels, dim)
        self.diag_proj = _xavier_linear(diag_channels, dim)
        self.out_proj = _xavier_linear(dim, diag_channels)

        def layers() -> nn.ModuleList:
            return nn.ModuleList(
                AttentionLayer(dim, num_heads, mlp_ratio, dropout) for _ in range(depth)
            )

        self.encoder = layers()
        self.decoder = layers()
        self.self_attn = layers()

    def encode(self, seg: Tensor, diag: Tensor, seg_pos: Tensor, diag_pos: Tensor) -> Tensor:
        """Segmentation tokens query diagnosis tokens; returns the embedding (length of ``seg``)."""
        if seg.shape[-1] != self.dim or diag.shape[-1] != self.dim:
            raise ShapeMismatchError(
                f"encoder expects tokens of dim {self.dim}, got {seg.shape[-1]} and {diag.shape[-1]}"
            )
        x = seg
        for layer in self.encoder:
            x = layer(x, diag, diag, seg_pos, diag_pos)
        return x

    def decode(self, diag: Tensor, embedding: Tensor, diag_pos: Tensor, embed_pos: Tensor) -> Tensor:
        """Diagnosis tokens query the embedding, then self-attention refines (length of ``diag``)."""
        if diag.shape[-1] != self.dim or embedding.shape[-1] != self.dim:
            raise ShapeMismatchError(
                f"decoder expects tokens of dim {self.dim}, "
                f"got {diag.shape[-1]} and {embedding.shape[-1]}"
            )
        x = diag
        for layer in self.decoder:
            x = layer(x, embedding, embedding, diag_pos, embed_pos)
        for layer in self.self_attn:
            x = layer(x, x, x, diag_pos, diag_pos)
        return x

    def forward(self, f_m: Tensor, f_d: Tensor) -> Tensor:
        if f_m.shape[0] != f_d.shape[0] or f_m.shape[-2:] != f_d.shape[-2:]:
            raise ShapeMismatchError(
                f"segmentation feature {tuple(f_m.shape)} and diagnosis feature "
                f"{tuple(f_d.shape)} must share batch and spatial size"
            )
        if f_m.shape[1] != self.seg_channels or f_d.shape[1] != self.diag_channels:
            raise ShapeMismatchError(
                f"expected {self.seg_channels} segmentation and {self.diag_channels} "
                f"diagnosis channels, got {f_m.shape[1]} and {f_d.shape[1]}"
            )
        h, w = f_d.shape[-2:]
        # grids coincide, so one encoding serves segmentation, diagnosis and embedding tokens
        pos = sine_positional_encoding(h, w, self.dim, dtype=f_d.dtype, device=f_d.device)
        seg = self.seg_proj(flatten_to_tokens(f_m))
        diag = self.diag_proj(flatten_to_tokens(f_d))
        embedding = self.encode(seg, diag, pos, pos)
        out = self.decode(diag, embedding, pos, pos)
        return tokens_to_feature(self.out_proj(out), h, w)
