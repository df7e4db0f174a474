"""
Variational adaptive noise and dropout.

Learnable per-unit Gaussian noise scale sigma and Bernoulli dropout ratio
beta for one recurrent layer. Both are stored unconstrained and mapped to
their domains with softplus/sigmoid through a straight-through transform:
the forward value is the mapped one, the Jacobian is the identity, so
updates on the raw parameters are not suppressed near the boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from vand_rnn.core.compute import Tensor, stop_gradient
from vand_rnn.models.experiment import VandKind, VandMode
from vand_rnn.models.layers import VandLayerParams
from vand_rnn.utils.random_stream import RandomStream


@dataclass
class EffectiveParams:
    """
    Noise scale and dropout ratio actually applied by a layer.

    Attributes:
        sigma: Noise scale, shape (H,)
        beta: Dropout ratio, shape (H,)
        learn_sigma: Whether sigma is trained
        learn_beta: Whether beta is trained
    """
    sigma: Tensor
    beta: Tensor
    learn_sigma: bool = False
    learn_beta: bool = False

    @property
    def has_noise(self) -> bool:
        return self.learn_sigma or bool((self.sigma != 0).any())

    @property
    def has_dropout(self) -> bool:
        return self.learn_beta or bool((self.beta != 0).any())


def transform_scale(sigma_real: Tensor) -> Tensor:
    """
    softplus in the forward pass, identity Jacobian in the backward pass.

    softplus is evaluated as log(exp(s) + 1) without a linear cutoff, so the
    forward value stays exact in the upper tail.
    """
    frozen = stop_gradient(sigma_real)
    return torch.logaddexp(frozen, torch.zeros_like(frozen)) + (sigma_real - frozen)


def transform_ratio(beta_real: Tensor) -> Tensor:
    """sigmoid in the forward pass, identity Jacobian in the backward pass."""
    frozen = stop_gradient(beta_real)
    return torch.sigmoid(frozen) + (beta_real - frozen)


def sample_noise(sigma: Tensor, rng: RandomStream, batch: int = 1) -> Tensor:
    """
    Reparameterized Gaussian noise eps = sigma * zeta, zeta ~ N(0, I).

    zeta is a tape constant, so gradients reach sigma. One draw per batch row
    and unit.
    """
    zeta = rng.normal((batch, sigma.shape[-1]))
    return sigma * zeta


def sample_mask(beta: Tensor, rng: RandomStream, batch: int = 1) -> Tensor:
    """
    Hard Bernoulli(beta) mask with a straight-through gradient.

    The forward value is exactly 0 or 1; d m / d beta is 1.
    """
    draw = rng.bernoulli(beta.detach().expand(batch, beta.shape[-1]))
    return stop_gradient(draw) + (beta - stop_gradient(beta))


def effective_params(params: VandLayerParams, mode: VandMode) -> EffectiveParams:
    """
    Map a layer's raw parameters to the values its condition applies.

    The constant conditions bypass the transforms and use ``mode.const_value``;
    disabled regularizers are exact zeros.
    """
    kind = mode.kind
    zeros = torch.zeros_like(params.sigma_real.detach())
    constant = torch.full_like(zeros, mode.const_value)

    if kind.learns_sigma:
        sigma = transform_scale(params.sigma_real)
    elif kind is VandKind.CONST_NOISE:
        sigma = constant
    else:
        sigma = zeros

    if kind.learns_beta:
        beta = transform_ratio(params.beta_real)
    elif kind is VandKind.CONST_DROPOUT:
        beta = constant
    else:
        beta = zeros

    return EffectiveParams(sigma, beta, kind.learns_sigma, kind.learns_beta)


__all__ = [
    "EffectiveParams",
    "transform_scale",
    "transform_ratio",
    "sample_noise",
    "sample_mask",
    "effective_params",
]
