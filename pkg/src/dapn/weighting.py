"""Uncertainty-based weighting of the four training losses."""
from __future__ import annotations

import math
from typing import NamedTuple, Optional, Sequence

import torch
from torch import nn

LOSS_NAMES = ("lps", "lpd", "ldc", "lds")


class LossBundle(NamedTuple):
    lps: torch.Tensor
    lpd: torch.Tensor
    ldc: Optional[torch.Tensor] = None
    lds: Optional[torch.Tensor] = None


class UncertaintyWeights(nn.Module):
    """Learnable log-variances ``w_j = log sigma_j^2``, initialised to 0."""

    def __init__(self, n: int = 4, learnable: bool = True):
        super().__init__()
        self.w = nn.Parameter(torch.zeros(n), requires_grad=learnable)

    def forward(self, losses: Sequence[Optional[torch.Tensor]]) -> torch.Tensor:
        return combine_losses(losses, self.w)


def combine_losses(losses: Sequence[Optional[torch.Tensor]],
                   w: torch.Tensor) -> torch.Tensor:
    """``sum_j w_j / 2 + exp(-w_j) L_j`` over the losses that are not None.

    Absent losses contribute nothing, including their ``w_j / 2`` term.
    """
    total = None
    for j, loss in enumerate(losses):
        if loss is None:
            continue
        if not torch.isfinite(loss).all():
            name = LOSS_NAMES[j] if j < len(LOSS_NAMES) else f"L{j + 1}"
            raise FloatingPointError(f"non-finite loss component {name}")
        term = w[j] / 2 + torch.exp(-w[j]) * loss
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no losses to combine")
    return total


def scaled_log_softmax(logits: torch.Tensor, c: int,
                       sigma: float) -> torch.Tensor:
    """Log-likelihood of class ``c`` under ``softmax(logits / sigma^2)``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    scaled = logits / sigma ** 2
    return scaled[..., c] - torch.logsumexp(scaled, dim=-1)


# name used by the verification tests
softmax_likelihood_weight_check = scaled_log_softmax


def stationary_weight(loss: float) -> float:
    """Minimiser of ``w/2 + exp(-w) L`` in ``w`` for ``L > 0``."""
    return math.log(2.0 * loss)
