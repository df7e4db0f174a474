"""Gaussian action head, its negative log-likelihood and the MSE metric."""

from __future__ import annotations

import math
from typing import Tuple

import torch
import torch.nn.functional as F

from vand_rnn.models.layers import GaussianHeadParams
from vand_rnn.settings import VARIANCE_FLOOR
from vand_rnn.utils.errors import ShapeMismatchError

LOG_2PI = math.log(2 * math.pi)


def head_forward(h: torch.Tensor, p: GaussianHeadParams) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Mean and variance of the action distribution.

    Works on (B, H) and on time-major (T, B, H) inputs alike.

    Returns:
        Tuple of (mu, var); var = softplus(.) + 1e-6 is strictly positive
    """
    if h.shape[-1] != p.hidden:
        raise ShapeMismatchError(f"head expects width {p.hidden}, got {h.shape[-1]}")
    mu = h @ p.W_mu.T + p.b_mu
    var = F.softplus(h @ p.W_v.T + p.b_v) + VARIANCE_FLOOR
    return mu, var


def gaussian_nll(mu: torch.Tensor, var: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """
    Diagonal Gaussian negative log-likelihood.

    Summed over action dimensions, averaged over the batch axis (the
    second-to-last one) and summed over any leading time axis, so a
    (T, B, |Y|) input yields the per-sequence sum of per-step batch means.

    Raises:
        ShapeMismatchError: If shapes differ
        ValueError: If any variance is not positive
    """
    if mu.shape != y.shape or var.shape != y.shape:
        raise ShapeMismatchError(
            f"nll shapes differ: mu {tuple(mu.shape)}, var {tuple(var.shape)}, y {tuple(y.shape)}"
        )
    if bool((var <= 0).any()):
        raise ValueError("gaussian_nll requires strictly positive variance")
    per_dim = 0.5 * (LOG_2PI + torch.log(var) + (y - mu) ** 2 / var)
    per_row = per_dim.sum(dim=-1)
    if per_row.ndim == 0:
        return per_row
    return per_row.mean(dim=-1).sum()


def mse(mu: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean squared error over every element."""
    if mu.shape != y.shape:
        raise ShapeMismatchError(f"mse shapes differ: {tuple(mu.shape)} vs {tuple(y.shape)}")
    return ((mu - y) ** 2).mean()


__all__ = ["head_forward", "gaussian_nll", "mse"]
