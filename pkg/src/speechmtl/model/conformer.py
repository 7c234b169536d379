"""Attention/convolution encoder blocks shared by all sequence modules.

Each block is pre-norm: self-attention, an optional depthwise-convolution
module, and a position-wise feed-forward, each with a residual connection,
followed by a final layer norm. Activations are smooth (SiLU/GLU) so the
whole stack is cleanly differentiable.
"""

from __future__ import annotations

import math

import torch
from torch import nn


def lengths_to_mask(lengths: torch.Tensor, max_len: int | None = None) -> torch.Tensor:
    """Boolean validity mask of shape (B, T): True where the frame is real."""
    lengths = torch.as_tensor(lengths, dtype=torch.long)
    if max_len is None:
        max_len = int(lengths.max())
    ar = torch.arange(max_len, device=lengths.device)
    return ar[None, :] < lengths[:, None]


def sinusoidal_positions(t: int, d: int, dtype, device) -> torch.Tensor:
    """Fixed sin/cos position table of shape (t, d); d must be even."""
    pos = torch.arange(t, dtype=torch.float64)[:, None]
    inv = torch.exp(-math.log(10000.0) * torch.arange(0, d, 2, dtype=torch.float64) / d)
    table = torch.zeros(t, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * inv)
    table[:, 1::2] = torch.cos(pos * inv)
    return table.to(dtype=dtype, device=device)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.w_in = nn.Linear(d_model, d_ff)
        self.w_out = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.dropout(self.w_out(self.dropout(torch.nn.functional.silu(self.w_in(x)))))


class ConvModule(nn.Module):
    """Pointwise-GLU, depthwise temporal convolution, pointwise projection."""

    def __init__(self, d_model: int, kernel: int, dropout: float):
        super().__init__()
        self.pointwise_in = nn.Conv1d(d_model, 2 * d_model, 1)
        self.depthwise = nn.Conv1d(d_model, d_model, kernel, padding=kernel // 2, groups=d_model)
        self.pointwise_out = nn.Conv1d(d_model, d_model, 1)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None):
        # Zero padded frames so the temporal kernel cannot read across them.
        if mask is not None:
            x = x * mask[..., None].to(x.dtype)
        y = x.transpose(1, 2)
        y = torch.nn.functional.glu(self.pointwise_in(y), dim=1)
        y = torch.nn.functional.silu(self.depthwise(y))
        y = self.pointwise_out(y)
        return self.dropout(y.transpose(1, 2))


class ConformerBlock(nn.Module):
    def __init__(self, d_model: int, d_ff: int, heads: int, kernel: int,
                 dropout: float, use_conv: bool = True):
        super().__init__()
        self.norm_mha = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, heads, dropout=dropout, batch_first=True)
        self.attn_dropout = nn.Dropout(dropout)
        self.use_conv = use_conv
        if use_conv:
            self.norm_conv = nn.LayerNorm(d_model)
            self.conv = ConvModule(d_model, kernel, dropout)
        self.norm_ff = nn.LayerNorm(d_model)
        self.ff = FeedForward(d_model, d_ff, dropout)
        self.norm_final = nn.LayerNorm(d_model)

    def forward(self, x, mask=None):
        pad_mask = None if mask is None else ~mask
        h = self.norm_mha(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + self.attn_dropout(attn_out)
        if self.use_conv:
            x = x + self.conv(self.norm_conv(x), mask)
        x = x + self.ff(self.norm_ff(x))
        return self.norm_final(x)


class ConformerStack(nn.Module):
    """A stack of blocks with optional sinusoidal positions added at the input."""

    def __init__(self, n_layers: int, d_model: int, d_ff: int, heads: int,
                 kernel: int, dropout: float, use_conv: bool = True,
                 use_positions: bool = True):
        super().__init__()
        self.d_model = d_model
        self.use_positions = use_positions
        self.blocks = nn.ModuleList([
            ConformerBlock(d_model, d_ff, heads, kernel, dropout, use_conv)
            for _ in range(n_layers)
        ])

    def forward(self, x, mask=None):
        if self.use_positions:
            x = x + sinusoidal_positions(x.shape[1], self.d_model, x.dtype, x.device)
        for block in self.blocks:
            x = block(x, mask)
        return x
