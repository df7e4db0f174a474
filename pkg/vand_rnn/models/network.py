"""Stacked LSTM model with per-layer regularizers, and its JSON persistence."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

import torch
from torch import nn

from vand_rnn import settings
from vand_rnn.models.experiment import VandMode
from vand_rnn.models.layers import GaussianHeadParams, LstmLayerParams, VandLayerParams
from vand_rnn.models.trajectory import NormStats
from vand_rnn.utils.errors import ConfigError, ShapeMismatchError
from vand_rnn.utils.random_stream import RandomStream


class StackedModel(nn.Module):
    """
    L LSTM layers, each with its own noise scale and dropout ratio, topped by
    a Gaussian action head.

    The model also carries the normalization statistics of its training data
    and the regularization condition it was trained under, so a saved file is
    enough to evaluate or roll it out.
    """

    def __init__(
        self,
        input_size: int,
        output_size: int,
        hidden: int = settings.DEFAULT_HIDDEN,
        layers: int = settings.DEFAULT_LAYERS,
        mode: Optional[VandMode] = None,
        rng: Optional[RandomStream] = None,
        norm: Optional[NormStats] = None,
        noise_in_recurrence: bool = settings.NOISE_IN_RECURRENCE,
        mask_cell_state: bool = settings.MASK_CELL_STATE,
        task: str = "task",
    ):
        super().__init__()
        if layers < 1:
            raise ShapeMismatchError(f"at least one layer required, got {layers}")
        self.input_size = input_size
        self.output_size = output_size
        self.hidden = hidden
        self.mode = mode or VandMode()
        self.norm = norm or NormStats.identity(input_size, output_size)
        self.noise_in_recurrence = noise_in_recurrence
        self.mask_cell_state = mask_cell_state
        self.task = task

        streams = rng.split(layers + 1) if rng is not None else [None] * (layers + 1)
        sizes = [input_size] + [hidden] * (layers - 1)
        self.layers = nn.ModuleList(
            LstmLayerParams(size, hidden, stream) for size, stream in zip(sizes, streams[:-1])
        )
        self.regularizers = nn.ModuleList(VandLayerParams(hidden) for _ in range(layers))
        self.head = GaussianHeadParams(hidden, output_size, streams[-1])

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def forward(self, xs: torch.Tensor, phase: str = "infer", rng: Optional[RandomStream] = None):
        """Top-layer outputs and the Gaussian head for a time-major batch."""
        from vand_rnn.core.head import head_forward
        from vand_rnn.core.rnn import stacked_forward

        outs, _ = stacked_forward(xs, self, self.mode, phase, rng)
        return head_forward(outs, self.head)

    def learnable_parameters(self) -> Dict[str, nn.Parameter]:
        """
        Parameters the optimizer updates under this model's condition.

        Weights are always included; sigma_real and beta_real only when the
        condition learns them.
        """
        kind = self.mode.kind
        params: Dict[str, nn.Parameter] = {}
        for name, param in self.named_parameters():
            if name.endswith("sigma_real") and not kind.learns_sigma:
                continue
            if name.endswith("beta_real") and not kind.learns_beta:
                continue
            params[name] = param
        return params

    def meta(self) -> Dict[str, Any]:
        return {
            "input_size": self.input_size,
            "output_size": self.output_size,
            "hidden": self.hidden,
            "layers": self.num_layers,
            "mode": self.mode.name,
            "const_value": self.mode.const_value,
            "noise_in_recurrence": self.noise_in_recurrence,
            "mask_cell_state": self.mask_cell_state,
            "task": self.task,
        }

    def to_dict(self) -> Dict[str, Any]:
        """Versioned document: meta, normalization stats and flat parameter arrays with shapes."""
        params = {
            name: {"shape": list(param.shape), "data": param.detach().reshape(-1).tolist()}
            for name, param in self.named_parameters()
        }
        return {
            "format_version": settings.FORMAT_VERSION,
            "meta": self.meta(),
            "norm": self.norm.to_dict(),
            "params": params,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StackedModel":
        version = data.get("format_version")
        if version != settings.FORMAT_VERSION:
            raise ConfigError(f"Unsupported model format_version: {version}")
        meta = data["meta"]
        model = cls(
            input_size=meta["input_size"],
            output_size=meta["output_size"],
            hidden=meta["hidden"],
            layers=meta["layers"],
            mode=VandMode.parse(meta["mode"], meta.get("const_value", settings.CONST_REGULARIZER_VALUE)),
            norm=NormStats.from_dict(data["norm"]),
            noise_in_recurrence=meta.get("noise_in_recurrence", settings.NOISE_IN_RECURRENCE),
            mask_cell_state=meta.get("mask_cell_state", settings.MASK_CELL_STATE),
            task=meta.get("task", "task"),
        )
        stored = data["params"]
        with torch.no_grad():
            for name, param in model.named_parameters():
                if name not in stored:
                    raise ConfigError(f"Model file lacks parameter '{name}'")
                entry = stored[name]
                if list(entry["shape"]) != list(param.shape):
                    raise ShapeMismatchError(
                        f"parameter '{name}': stored shape {entry['shape']} != {list(param.shape)}"
                    )
                values = torch.tensor(entry["data"], dtype=settings.DTYPE)
                param.copy_(values.reshape(param.shape))
        return model


def save_model(model: StackedModel, path: os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")
    return path


def load_model(path: os.PathLike) -> StackedModel:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid model file ({exc})") from exc
    return StackedModel.from_dict(data)


def model_filename(task: str, mode: str, seed: int) -> str:
    return f"{task}_{mode}_{seed}.model.json"


__all__ = ["StackedModel", "save_model", "load_model", "model_filename"]
