"""
LSTM recurrence with noise and dropout insertion points.

Per layer and time step (train phase):

    m ~ Bernoulli(beta)            mask on the previous hidden state
    h, c = lstm(x, (1 - m) h_prev, c_prev)
    out = h + eps, eps ~ N(0, sigma)

``out`` feeds the next layer (and the head after the top layer) while the
clean ``h`` recurs. In the infer phase the draws are replaced by their means:
eps = 0 and m = beta.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple

import torch

from vand_rnn.core.vand import EffectiveParams, effective_params, sample_mask, sample_noise
from vand_rnn.models.experiment import VandMode
from vand_rnn.models.layers import LstmLayerParams
from vand_rnn.utils.errors import DivergenceError, ShapeMismatchError
from vand_rnn.utils.random_stream import RandomStream

if TYPE_CHECKING:
    from vand_rnn.models.network import StackedModel

logger = logging.getLogger(__name__)

PHASES = ("train", "infer")


@dataclass
class HiddenState:
    """Per-layer hidden and cell states, each of shape (B, H)."""
    h: List[torch.Tensor] = field(default_factory=list)
    c: List[torch.Tensor] = field(default_factory=list)

    @classmethod
    def zeros(cls, layers: int, batch: int, hidden: int, dtype=torch.float64) -> "HiddenState":
        return cls(
            h=[torch.zeros(batch, hidden, dtype=dtype) for _ in range(layers)],
            c=[torch.zeros(batch, hidden, dtype=dtype) for _ in range(layers)],
        )


def lstm_cell(
    x: torch.Tensor,
    h_prev: torch.Tensor,
    c_prev: torch.Tensor,
    p: LstmLayerParams,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    One LSTM step.

    Args:
        x: Input, shape (B, D_in)
        h_prev: Previous hidden state, shape (B, H)
        c_prev: Previous cell state, shape (B, H)
        p: Layer weights

    Returns:
        Tuple of (h, c), each of shape (B, H)

    Raises:
        ShapeMismatchError: If any operand disagrees with the layer sizes
    """
    if x.ndim != 2 or x.shape[1] != p.input_size:
        raise ShapeMismatchError(f"lstm input shape {tuple(x.shape)} does not match D_in={p.input_size}")
    expected = (x.shape[0], p.hidden)
    if tuple(h_prev.shape) != expected or tuple(c_prev.shape) != expected:
        raise ShapeMismatchError(
            f"lstm state shapes {tuple(h_prev.shape)}, {tuple(c_prev.shape)} != {expected}"
        )
    gates = x @ p.W_ih.T + h_prev @ p.W_hh.T + p.b
    i, f, g, o = gates.chunk(4, dim=1)
    i = torch.sigmoid(i)
    f = torch.sigmoid(f)
    g = torch.tanh(g)
    o = torch.sigmoid(o)
    c = f * c_prev + i * g
    h = o * torch.tanh(c)
    return h, c


def vand_layer_step(
    x_in: torch.Tensor,
    state: Tuple[torch.Tensor, torch.Tensor],
    p: LstmLayerParams,
    effective: EffectiveParams,
    phase: str,
    rng: Optional[RandomStream] = None,
    noise_in_recurrence: bool = False,
    mask_cell_state: bool = False,
) -> Tuple[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
    """
    One layer, one time step, with dropout on the recurrent input and noise
    on the forwarded output.

    Returns:
        Tuple of (out, (h, c)); ``out`` is what the next layer sees.

    Raises:
        ValueError: If the phase is unknown, or the train phase needs draws and no rng is given
    """
    if phase not in PHASES:
        raise ValueError(f"Unknown phase '{phase}', expected one of {PHASES}")
    h_prev, c_prev = state
    batch = x_in.shape[0]
    needs_draws = phase == "train" and (effective.has_dropout or effective.has_noise)
    if needs_draws and rng is None:
        raise ValueError("train phase with noise or dropout requires a random stream")

    h_in, c_in = h_prev, c_prev
    if effective.has_dropout:
        if phase == "train":
            keep = 1 - sample_mask(effective.beta, rng, batch)
        else:
            keep = 1 - effective.beta
        h_in = keep * h_prev
        if mask_cell_state:
            c_in = keep * c_prev

    h, c = lstm_cell(x_in, h_in, c_in, p)

    out = h
    if phase == "train" and effective.has_noise:
        out = h + sample_noise(effective.sigma, rng, batch)
    recurrent = out if noise_in_recurrence else h
    return out, (recurrent, c)


def stacked_forward(
    xs: torch.Tensor,
    model: "StackedModel",
    mode: Optional[VandMode] = None,
    phase: str = "infer",
    rng: Optional[RandomStream] = None,
    overrides: Optional[Sequence[EffectiveParams]] = None,
    state: Optional[HiddenState] = None,
) -> Tuple[torch.Tensor, HiddenState]:
    """
    Unroll the stacked recurrence over a time-major batch.

    Each layer draws from its own child stream of ``rng`` in time order, so a
    seed reproduces the exact mask and noise sequences.

    Args:
        xs: Inputs, shape (T, B, |X|)
        model: Weights and regularizer parameters
        mode: Regularization condition (defaults to the model's)
        phase: "train" (sampled) or "infer" (means)
        rng: Random stream, required in the train phase unless nothing is sampled
        overrides: Per-layer effective parameters replacing those derived from ``mode``
        state: Initial state (defaults to zeros)

    Returns:
        Tuple of (top-layer outputs of shape (T, B, H), final HiddenState)

    Raises:
        DivergenceError: If an activation becomes non-finite
        ShapeMismatchError: If xs does not match the model's input width
    """
    if xs.ndim != 3 or xs.shape[2] != model.input_size:
        raise ShapeMismatchError(f"inputs of shape {tuple(xs.shape)} do not match |X|={model.input_size}")
    steps, batch = xs.shape[0], xs.shape[1]
    if steps < 1:
        raise ValueError("at least one time step required")
    mode = mode or model.mode
    layers = model.num_layers

    if overrides is not None:
        if len(overrides) != layers:
            raise ShapeMismatchError(f"{len(overrides)} overrides for {layers} layers")
        effective = list(overrides)
    else:
        effective = [effective_params(v, mode) for v in model.regularizers]
    streams: List[Optional[RandomStream]] = rng.split(layers) if rng is not None else [None] * layers
    if state is None:
        state = HiddenState.zeros(layers, batch, model.hidden, dtype=xs.dtype)
    h, c = list(state.h), list(state.c)

    outs = []
    for t in range(steps):
        layer_in = xs[t]
        for l in range(layers):
            out, (h[l], c[l]) = vand_layer_step(
                layer_in,
                (h[l], c[l]),
                model.layers[l],
                effective[l],
                phase,
                streams[l],
                model.noise_in_recurrence,
                model.mask_cell_state,
            )
            if not torch.isfinite(out).all():
                logger.warning("Non-finite activation at t=%d, layer=%d", t, l)
                raise DivergenceError(f"non-finite activation at t={t}, layer={l}", step=t, layer=l)
            layer_in = out
        outs.append(layer_in)
    return torch.stack(outs), HiddenState(h, c)


__all__ = ["HiddenState", "PHASES", "lstm_cell", "vand_layer_step", "stacked_forward"]
