"""
Dense float64 math with reverse-mode differentiation.

Tensors and tape nodes are plain ``torch.Tensor`` objects in float64; the
tape is torch's autograd graph. The functions here validate shapes the way
the rest of the package expects, provide ``stop_gradient`` (with an optional
record/replay mode used by finite-difference checks of straight-through
estimators) and a central-difference ``grad_check`` oracle.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Mapping, Optional

import torch
import torch.nn.functional as F

from vand_rnn.settings import DTYPE
from vand_rnn.utils.errors import ShapeMismatchError

Tensor = torch.Tensor

UNARY_OPS: Dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "softplus": F.softplus,
    "exp": torch.exp,
    "log": torch.log,
    "neg": torch.neg,
    "square": torch.square,
}

BINARY_OPS: Dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": torch.add,
    "sub": torch.sub,
    "mul": torch.mul,
    "div": torch.div,
}


def tensor(values, requires_grad: bool = False) -> Tensor:
    """Build a float64 tensor (a leaf when ``requires_grad``)."""
    return torch.as_tensor(values, dtype=DTYPE).clone().requires_grad_(requires_grad)


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """
    Apply an elementwise operation.

    Binary operands must have equal shapes, or one of them must hold a
    single element which is broadcast over the other.

    Args:
        op: One of add, sub, mul, div, tanh, sigmoid, softplus, exp, log, neg, square
        a: First operand
        b: Second operand for binary ops

    Returns:
        Tensor: The result, recorded on the tape

    Raises:
        ShapeMismatchError: If binary operand shapes are not broadcastable
        ValueError: If the op is unknown or the operand count is wrong
    """
    if op in UNARY_OPS:
        if b is not None:
            raise ValueError(f"{op} takes one operand")
        return UNARY_OPS[op](a)
    if op not in BINARY_OPS:
        raise ValueError(f"Unknown elementwise op: {op}")
    if b is None:
        raise ValueError(f"{op} takes two operands")
    if a.shape != b.shape and a.numel() != 1 and b.numel() != 1:
        raise ShapeMismatchError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not broadcast")
    if a.numel() == 1 and a.shape != b.shape:
        a = a.reshape(())
    if b.numel() == 1 and a.shape != b.shape:
        b = b.reshape(())
    return BINARY_OPS[op](a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of an (n, k) and a (k, m) tensor."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul inner dimensions differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def reduce(op: str, a: Tensor) -> Tensor:
    """Sum or mean over all elements, as a scalar."""
    if op == "sum":
        return a.sum()
    if op == "mean":
        return a.mean()
    raise ValueError(f"Unknown reduction: {op}")


class StopGradientReplay:
    """
    Records the values produced by ``stop_gradient`` and replays them.

    In ``record`` mode every stop-gradient value is appended; in ``replay``
    mode the recorded values are returned in the same order instead of the
    live ones. Evaluating a function once under ``record`` and then its
    perturbations under ``replay`` freezes every stop-gradient branch at the
    base point, which turns straight-through estimators into differentiable
    surrogates that central differences can check.
    """

    def __init__(self):
        self.values: List[Tensor] = []
        self.mode = "record"
        self._cursor = 0

    def __call__(self, a: Tensor) -> Tensor:
        if self.mode == "record":
            value = a.detach().clone()
            self.values.append(value)
            return value
        if self._cursor >= len(self.values):
            raise RuntimeError("stop-gradient replay exhausted: the graph differs from the recorded one")
        value = self.values[self._cursor]
        self._cursor += 1
        if value.shape != a.shape:
            raise ShapeMismatchError(f"stop-gradient replay shape {tuple(value.shape)} != {tuple(a.shape)}")
        return value

    def rewind(self):
        self.mode = "replay"
        self._cursor = 0


_local = threading.local()


@contextmanager
def stop_gradient_replay(replay: StopGradientReplay) -> Iterator[StopGradientReplay]:
    """Route ``stop_gradient`` through ``replay`` on this thread."""
    previous = getattr(_local, "replay", None)
    _local.replay = replay
    try:
        yield replay
    finally:
        _local.replay = previous


def stop_gradient(a: Tensor) -> Tensor:
    """Same value, cut from the tape: no parents, excluded from backward."""
    replay = getattr(_local, "replay", None)
    if replay is not None:
        return replay(a)
    return a.detach()


def backward(loss: Tensor, leaves: Mapping[str, Tensor]) -> Dict[str, Tensor]:
    """
    Gradients of a scalar loss with respect to named leaves.

    Leaves the loss does not depend on (or only reaches through
    ``stop_gradient``) get zero gradients. Multiple uses of a node
    accumulate additively.

    Raises:
        ShapeMismatchError: If the loss is not a scalar
    """
    if loss.numel() != 1:
        raise ShapeMismatchError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    names = [name for name, leaf in leaves.items() if leaf.requires_grad]
    if not names:
        return {}
    if not loss.requires_grad:
        return {name: torch.zeros_like(leaves[name]) for name in names}
    grads =torch.autograd.grad(loss.reshape(()), [leaves[name] for name in names], allow_unused=True)
    return {
        name: torch.zeros_like(leaves[name]) if grad is None else grad
        for name, grad in zip(names, grads)
    }


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-6,
    freeze_stop_gradient: bool = False,
) -> float:
    """
    Compare autodiff against central differences.

    Args:
        f: Scalar function of one tensor
        x: Point of evaluation
        step: Finite-difference step
        freeze_stop_gradient: Replay stop-gradient values from the base
            evaluation during the perturbed ones, so straight-through
            surrogates are differenced instead of the hard forward values

    Returns:
        float: max over coordinates of |autodiff - fd| / max(1e-12, |fd|)

    Raises:
        ValueError: If step is not positive or f(x) is not finite
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    replay = StopGradientReplay() if freeze_stop_gradient else None
    point = x.detach().clone().requires_grad_(True)
    with _maybe_replay(replay):
        value = f(point)
        if not torch.isfinite(value).all():
            raise ValueError("grad_check: f(x) is not finite")
        analytic = None
        if value.requires_grad:
            (analytic,) = torch.autograd.grad(value.reshape(()), [point], allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(point)

    def evaluate(shifted: Tensor) -> float:
        if replay is not None:
            replay.rewind()
        with torch.no_grad(), _maybe_replay(replay):
            return float(f(shifted))

    base = x.detach().reshape(-1)
    worst = 0.0
    for i in range(base.numel()):
        plus = base.clone()
        minus = base.clone()
        plus[i] += step
        minus[i] -= step
        fd = (evaluate(plus.reshape(x.shape)) - evaluate(minus.reshape(x.shape))) / (2 * step)
        ad = float(analytic.reshape(-1)[i])
        worst = max(worst, abs(ad - fd) / max(1e-12, abs(fd)))
    return worst


@contextmanager
def _maybe_replay(replay: Optional[StopGradientReplay]):
    if replay is None:
        yield None
    else:
        with stop_gradient_replay(replay) as active:
            yield active


__all__ = [
    "Tensor",
    "tensor",
    "elementwise",
    "matmul",
    "reduce",
    "stop_gradient",
    "StopGradientReplay",
    "stop_gradient_replay",
    "backward",
    "grad_check",
]
