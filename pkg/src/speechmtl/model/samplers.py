"""Temporal down/up-sampling with strided 1-D convolutions.

The downsampler halves the length per block (ceil division), the upsampler
exactly doubles it, so ``blocks=2`` gives the rate-4 contract used between
frame-level and content-level sequences.
"""

from __future__ import annotations

import torch
from torch import nn


class Downsampler(nn.Module):
    def __init__(self, in_dim: int, d_model: int, blocks: int = 2):
        super().__init__()
        convs = []
        for i in range(blocks):
            convs.append(nn.Conv1d(in_dim if i == 0 else d_model, d_model, 3, stride=2, padding=1))
        self.convs = nn.ModuleList(convs)
        self.rate = 2 ** blocks

    def forward(self, x):
        # x: (B, T, D) -> (B, ceil(T / rate), d_model)
        y = x.transpose(1, 2)
        for conv in self.convs:
            y = torch.nn.functional.silu(conv(y))
        return y.transpose(1, 2)

    def out_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        for _ in range(len(self.convs)):
            lengths = (lengths + 1) // 2
        return lengths


class Upsampler(nn.Module):
    def __init__(self, d_model: int, blocks: int = 2):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.ConvTranspose1d(d_model, d_model, 4, stride=2, padding=1)
            for _ in range(blocks)
        ])
        self.rate = 2 ** blocks

    def forward(self, x):
        # x: (B, T, D) -> (B, T * rate, D)
        y = x.transpose(1, 2)
        for conv in self.convs:
            y = torch.nn.functional.silu(conv(y))
        return y.transpose(1, 2)

    def out_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        return torch.as_tensor(lengths, dtype=torch.long) * self.rate


def match_length(x: torch.Tensor, target_len: int, tol: int = 3) -> torch.Tensor:
    """Trim or right-pad (replicating the last frame) along dim 1.

    Padding beyond ``tol`` frames means the sequences were never aligned and
    is an error; trimming any overshoot is always allowed.
    """
    cur = x.shape[1]
    if cur >= target_len:
        return x[:, :target_len]
    if target_len - cur > tol:
        raise ValueError(f"length mismatch beyond tolerance: have {cur}, need {target_len}")
    pad = x[:, -1:].expand(x.shape[0], target_len - cur, *x.shape[2:])
    return torch.cat([x, pad], dim=1)
