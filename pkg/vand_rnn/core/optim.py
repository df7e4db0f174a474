"""
Gradient-descent optimizers over named parameters.

``adam_step`` is the update rule; ``Adam`` wraps it behind the ``Optimizer``
interface the trainer talks to, so other rules can be slotted in.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Mapping

import torch

from vand_rnn import settings
from vand_rnn.utils.errors import NonFiniteGradientError, ShapeMismatchError


@dataclass
class AdamState:
    """
    Moment estimates and hyperparameters of an Adam run.

    Attributes:
        m: First moments, keyed like the parameters
        v: Second moments, keyed like the parameters
        t: Number of steps taken
        lr: Step size alpha
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator offset
    """
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)
    t: int = 0
    lr: float = settings.DEFAULT_LR
    beta1: float = settings.ADAM_BETA1
    beta2: float = settings.ADAM_BETA2
    eps: float = settings.ADAM_EPS


def zero_like_state(
    params: Mapping[str, torch.Tensor],
    lr: float = settings.DEFAULT_LR,
    beta1: float = settings.ADAM_BETA1,
    beta2: float = settings.ADAM_BETA2,
    eps: float = settings.ADAM_EPS,
) -> AdamState:
    """Zeroed moments mirroring the parameter shapes, t = 0."""
    return AdamState(
        m={name: torch.zeros_like(p.detach()) for name, p in params.items()},
        v={name: torch.zeros_like(p.detach()) for name, p in params.items()},
        t=0,
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, torch.Tensor],
    state: AdamState,
) -> AdamState:
    """
    Apply one bias-corrected Adam update in place.

    Every gradient is validated before any parameter moves, so a rejected
    step leaves the parameters and the state untouched.

    Args:
        params: Parameters to update, keyed by name
        grads: Gradients for (a subset of) the parameters; missing ones count as zero
        state: Moments and hyperparameters; updated and returned

    Returns:
        AdamState: The updated state

    Raises:
        NonFiniteGradientError: If a gradient holds NaN or Inf
        ShapeMismatchError: If a gradient's shape differs from its parameter's
        ValueError: If the learning rate is not positive
    """
    if state.lr <= 0:
        raise ValueError(f"learning rate must be positive, got {state.lr}")
    for name, grad in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter '{name}'")
        if grad.shape != params[name].shape:
            raise ShapeMismatchError(
                f"gradient for '{name}' has shape {tuple(grad.shape)}, parameter {tuple(params[name].shape)}"
            )
        if not torch.isfinite(grad).all():
            raise NonFiniteGradientError(name)

    state.t += 1
    bias1 = 1 - state.beta1 ** state.t
    bias2 = 1 - state.beta2 ** state.t
    with torch.no_grad():
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                grad = torch.zeros_like(param)
            m = state.m.setdefault(name, torch.zeros_like(param))
            v = state.v.setdefault(name, torch.zeros_like(param))
            m.mul_(state.beta1).add_(grad, alpha=1 - state.beta1)
            v.mul_(state.beta2).addcmul_(grad, grad, value=1 - state.beta2)
            m_hat = m / bias1
            v_hat = v / bias2
            param.sub_(state.lr * m_hat / (v_hat.sqrt() + state.eps))
    return state


class Optimizer(ABC):
    """Interface between the trainer and an update rule."""

    def __init__(self, params: Mapping[str, torch.Tensor]):
        self.params = dict(params)

    @abstractmethod
    def step(self, grads: Mapping[str, torch.Tensor]) -> None:
        """Update the parameters in place."""

    @property
    @abstractmethod
    def steps(self) -> int:
        """Number of updates applied so far."""


class Adam(Optimizer):
    """Adam over a fixed set of named parameters."""

    def __init__(
        self,
        params: Mapping[str, torch.Tensor],
        lr: float = settings.DEFAULT_LR,
        beta1: float = settings.ADAM_BETA1,
        beta2: float = settings.ADAM_BETA2,
        eps: float = settings.ADAM_EPS,
    ):
        super().__init__(params)
        self.state = zero_like_state(self.params, lr, beta1, beta2, eps)

    def step(self, grads: Mapping[str, torch.Tensor]) -> None:
        adam_step(self.params, grads, self.state)

    @property
    def steps(self) -> int:
        return self.state.t


__all__ = ["AdamState", "zero_like_state", "adam_step", "Optimizer", "Adam"]
