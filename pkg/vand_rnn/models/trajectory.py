"""Trajectory records, normalization statistics and training batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
import torch

from vand_rnn.utils.errors import ShapeMismatchError


@dataclass(frozen=True)
class Trajectory:
    """
    One demonstration: time-indexed observation/action pairs.

    Attributes:
        id: Identifier, unique within a dataset
        x: Observations, shape (T, |X|)
        y: Actions, shape (T, |Y|)
    """
    id: str
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise ShapeMismatchError(f"trajectory {self.id}: x and y must be 2-D")
        if self.x.shape[0] != self.y.shape[0]:
            raise ShapeMismatchError(
                f"trajectory {self.id}: x has {self.x.shape[0]} steps, y has {self.y.shape[0]}"
            )
        if self.x.shape[0] < 2:
            raise ValueError(f"trajectory {self.id}: at least 2 steps required")
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError(f"trajectory {self.id}: non-finite values")

    def __len__(self):
        return self.x.shape[0]

    @property
    def x_dim(self) -> int:
        return self.x.shape[1]

    @property
    def y_dim(self) -> int:
        return self.y.shape[1]

    def window(self, start: int, length: int) -> "Trajectory":
        """View of ``length`` steps starting at the 0-based index ``start``."""
        if start < 0 or start + length > len(self):
            raise IndexError(f"window {start}+{length} outside trajectory of {len(self)} steps")
        return Trajectory(self.id, self.x[start:start + length], self.y[start:start + length])

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "x": self.x.tolist(), "y": self.y.tolist()}


@dataclass(frozen=True)
class NormStats:
    """Per-dimension mean and (floored) standard deviation of inputs and targets."""
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key).tolist() for key in ("x_mean", "x_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NormStats":
        return cls(**{key: np.asarray(data[key], dtype=np.float64)
                      for key in ("x_mean", "x_std", "y_mean", "y_std")})

    @classmethod
    def identity(cls, x_dim: int, y_dim: int) -> "NormStats":
        return cls(np.zeros(x_dim), np.ones(x_dim), np.zeros(y_dim), np.ones(y_dim))


@dataclass
class Batch:
    """
    Time-major training batch.

    Attributes:
        x: Inputs, shape (T', B, |X|)
        y: Targets, shape (T', B, |Y|)
    """
    x: torch.Tensor
    y: torch.Tensor


__all__ = ["Trajectory", "NormStats", "Batch"]
