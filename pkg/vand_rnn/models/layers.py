"""Parameter containers for the recurrent layers, their regularizers and the output head."""

from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

from vand_rnn import settings
from vand_rnn.utils.errors import ShapeMismatchError
from vand_rnn.utils.random_stream import RandomStream


class LstmLayerParams(nn.Module):
    """
    Weights of one LSTM layer, gates ordered i, f, g, o.

    Attributes:
        W_ih: Input weights, shape (4H, D_in)
        W_hh: Recurrent weights, shape (4H, H)
        b: Gate biases, shape (4H,)
    """

    def __init__(self, input_size: int, hidden: int, rng: Optional[RandomStream] = None):
        super().__init__()
        if input_size < 1 or hidden < 1:
            raise ShapeMismatchError(f"LSTM layer needs positive sizes, got {input_size}x{hidden}")
        self.input_size = input_size
        self.hidden = hidden
        self.W_ih = nn.Parameter(torch.zeros(4 * hidden, input_size, dtype=settings.DTYPE))
        self.W_hh = nn.Parameter(torch.zeros(4 * hidden, hidden, dtype=settings.DTYPE))
        self.b = nn.Parameter(torch.zeros(4 * hidden, dtype=settings.DTYPE))
        if rng is not None:
            self.reset_parameters(rng)

    def reset_parameters(self, rng: RandomStream) -> None:
        """U(-1/sqrt(H), 1/sqrt(H)) weights, zero biases except the forget gate."""
        bound = 1.0 / math.sqrt(self.hidden)
        with torch.no_grad():
            self.W_ih.copy_(rng.uniform(self.W_ih.shape, -bound, bound))
            self.W_hh.copy_(rng.uniform(self.W_hh.shape, -bound, bound))
            self.b.zero_()
            self.b[self.hidden:2 * self.hidden] = settings.FORGET_BIAS

    def extra_repr(self) -> str:
        return f"input_size={self.input_size}, hidden={self.hidden}"


class VandLayerParams(nn.Module):
    """
    Raw (unconstrained) noise scale and dropout ratio of one layer.

    Initialised at zero, i.e. sigma = ln 2 and beta = 0.5 after the transforms.
    """

    def __init__(self, hidden: int):
        super().__init__()
        self.hidden = hidden
        self.sigma_real = nn.Parameter(torch.zeros(hidden, dtype=settings.DTYPE))
        self.beta_real = nn.Parameter(torch.zeros(hidden, dtype=settings.DTYPE))

    def extra_repr(self) -> str:
        return f"hidden={self.hidden}"


class GaussianHeadParams(nn.Module):
    """Affine maps from the top hidden state to the action mean and pre-softplus variance."""

    def __init__(self, hidden: int, output_size: int, rng: Optional[RandomStream] = None):
        super().__init__()
        self.hidden = hidden
        self.output_size = output_size
        self.W_mu = nn.Parameter(torch.zeros(output_size, hidden, dtype=settings.DTYPE))
        self.b_mu = nn.Parameter(torch.zeros(output_size, dtype=settings.DTYPE))
        self.W_v = nn.Parameter(torch.zeros(output_size, hidden, dtype=settings.DTYPE))
        self.b_v = nn.Parameter(torch.zeros(output_size, dtype=settings.DTYPE))
        if rng is not None:
            self.reset_parameters(rng)

    def reset_parameters(self, rng: RandomStream) -> None:
        bound = 1.0 / math.sqrt(self.hidden)
        with torch.no_grad():
            self.W_mu.copy_(rng.uniform(self.W_mu.shape, -bound, bound))
            self.W_v.copy_(rng.uniform(self.W_v.shape, -bound, bound))
            self.b_mu.zero_()
            self.b_v.zero_()

    def extra_repr(self) -> str:
        return f"hidden={self.hidden}, output_size={self.output_size}"


__all__ = ["LstmLayerParams", "VandLayerParams", "GaussianHeadParams"]
