"""Experiment descriptions: regularization modes, training configs and per-run results."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from vand_rnn import settings
from vand_rnn.utils.errors import ConfigError


class VandKind(Enum):
    """The six regularization conditions of the comparison matrix."""
    VANILLA = "vanilla"
    CONST_NOISE = "const_noise"
    VAR_NOISE = "var_noise"
    CONST_DROPOUT = "const_dropout"
    VAR_DROPOUT = "var_dropout"
    VAND = "vand"

    @classmethod
    def parse(cls, name: str) -> "VandKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(kind.value for kind in cls)
            raise ConfigError(f"Unknown mode '{name}'. Valid modes: {valid}") from None

    @property
    def has_noise(self) -> bool:
        return self in (VandKind.CONST_NOISE, VandKind.VAR_NOISE, VandKind.VAND)

    @property
    def has_dropout(self) -> bool:
        return self in (VandKind.CONST_DROPOUT, VandKind.VAR_DROPOUT, VandKind.VAND)

    @property
    def learns_sigma(self) -> bool:
        return self in (VandKind.VAR_NOISE, VandKind.VAND)

    @property
    def learns_beta(self) -> bool:
        return self in (VandKind.VAR_DROPOUT, VandKind.VAND)


@dataclass(frozen=True)
class VandMode:
    """
    A regularization condition.

    Attributes:
        kind: Which of the six conditions
        const_value: Noise scale / dropout ratio used by the constant conditions
    """
    kind: VandKind = VandKind.VAND
    const_value: float = settings.CONST_REGULARIZER_VALUE

    def __post_init__(self):
        if not 0.0 < self.const_value < 1.0:
            raise ConfigError(f"const_value must lie in (0, 1), got {self.const_value}")

    @classmethod
    def parse(cls, name: str, const_value: float = settings.CONST_REGULARIZER_VALUE) -> "VandMode":
        return cls(VandKind.parse(name), const_value)

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters of one training run.

    Defaults follow the reference protocol: two 100-unit LSTM layers, Adam at
    lr 1e-3, batch 50, 1000 epochs of one batch each.
    """
    mode: str = "vand"
    const_value: float = settings.CONST_REGULARIZER_VALUE
    layers: int = settings.DEFAULT_LAYERS
    hidden: int = settings.DEFAULT_HIDDEN
    lr: float = settings.DEFAULT_LR
    beta1: float = settings.ADAM_BETA1
    beta2: float = settings.ADAM_BETA2
    eps: float = settings.ADAM_EPS
    batch_size: int = settings.DEFAULT_BATCH_SIZE
    epochs: int = settings.DEFAULT_EPOCHS
    steps_per_epoch: int = settings.STEPS_PER_EPOCH
    eval_every: int = settings.EVAL_EVERY
    seed: int = 0
    noise_in_recurrence: bool = settings.NOISE_IN_RECURRENCE
    mask_cell_state: bool = settings.MASK_CELL_STATE
    max_offset: int = settings.MAX_OFFSET
    task: str = "task"

    def __post_init__(self):
        VandKind.parse(self.mode)
        for name in ("layers", "hidden", "batch_size", "epochs", "steps_per_epoch", "eval_every"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.max_offset < 0:
            raise ConfigError(f"max_offset must be non-negative, got {self.max_offset}")

    @property
    def vand_mode(self) -> VandMode:
        return VandMode.parse(self.mode, self.const_value)

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]] = None) -> "TrainConfig":
        """Defaults updated with ``data``; unknown keys are rejected."""
        values: Dict[str, Any] = {}
        if data:
            known = {f.name for f in fields(cls)}
            unknown = sorted(set(data) - known)
            if unknown:
                raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
            values.update({key: value for key, value in data.items() if value is not None})
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def updated(self, **overrides: Any) -> "TrainConfig":
        """Copy with the non-None overrides applied."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path: Optional[os.PathLike] = None, **overrides: Any) -> TrainConfig:
    """
    Read a JSON config file and apply flag overrides.

    The seed falls back to the ``VAND_SEED`` environment variable when neither
    the file nor the overrides set it.

    Raises:
        ConfigError: If the file is not a JSON object or holds unknown keys
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    if "seed" not in data and overrides.get("seed") is None:
        env_seed = os.environ.get(settings.SEED_ENV_VAR)
        if env_seed:
            try:
                data["seed"] = int(env_seed)
            except ValueError as exc:
                raise ConfigError(f"{settings.SEED_ENV_VAR} must be an integer, got {env_seed!r}") from exc
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data)


@dataclass
class ConditionResult:
    """Outcome of one (mode, seed) training run."""
    task: str
    mode: str
    seed: int
    mse_norm: Optional[float] = None
    mse_raw: Optional[float] = None
    nll_curve: List[float] = field(default_factory=list)
    eval_curve: List[Dict[str, float]] = field(default_factory=list)
    wall_s: float = 0.0
    diverged: bool = False
    steps: int = 0

    def row(self) -> Dict[str, Any]:
        """The results-table row: task, mode, seed, mse_norm, mse_raw, diverged, wall_s."""
        return {
            "task": self.task,
            "mode": self.mode,
            "seed": self.seed,
            "mse_norm": None if self.diverged else self.mse_norm,
            "mse_raw": None if self.diverged else self.mse_raw,
            "diverged": self.diverged,
            "wall_s": round(self.wall_s, 3),
        }


__all__ = ["VandKind", "VandMode", "TrainConfig", "ConditionResult", "load_config"]
