"""Uncertainty-based loss balancing with one learnable scale per task.

Each task loss L_i is rescaled to L_i / sigma_i^2 + log(sigma_i). The sigmas
are stored as log-values so they stay strictly positive no matter what the
optimizer does to the underlying parameter; they start at sigma = 1.
"""

from __future__ import annotations

import torch
from torch import nn


def balance_losses(losses: dict[str, torch.Tensor], sigmas: dict[str, torch.Tensor]) -> torch.Tensor:
    """Total of L_i / sigma_i^2 + log(sigma_i) over the given tasks."""
    total = None
    for name, loss in losses.items():
        sigma = sigmas[name]
        term = loss / sigma ** 2 + torch.log(sigma)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no losses to balance")
    return total


class LossBalancer(nn.Module):
    """Holds one log-sigma parameter per task (or per loss term)."""

    def __init__(self, names: list[str]):
        super().__init__()
        self.names = list(names)
        self.log_sigma = nn.ParameterDict(
            {n: nn.Parameter(torch.zeros(())) for n in self.names})

    def sigma(self, name: str) -> torch.Tensor:
        return torch.exp(self.log_sigma[name])

    def sigmas(self) -> dict[str, float]:
        return {n: float(torch.exp(p.detach())) for n, p in self.log_sigma.items()}

    def scaled(self, name: str, loss: torch.Tensor) -> torch.Tensor:
        """One task's contribution: L / sigma^2 + log(sigma)."""
        s = self.sigma(name)
        return loss / s ** 2 + torch.log(s)

    def total(self, losses: dict[str, torch.Tensor]) -> torch.Tensor:
        return balance_losses(losses, {n: self.sigma(n) for n in losses})
