"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations

from typing import Optional


class VandError(Exception):
    """Base class for every error raised by vand_rnn."""


class ShapeMismatchError(VandError, ValueError):
    """Operands or parameters have incompatible shapes."""


class ConfigError(VandError, ValueError):
    """A training configuration is malformed or inconsistent with the data."""


class DatasetFormatError(VandError, ValueError):
    """
    A trajectory file could not be parsed.

    Attributes:
        line: 1-based line number of the offending record (None for
            file-level problems such as an empty file)
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NoLearnableRegularizersError(VandError, ValueError):
    """The model carries no learnable noise scale or dropout ratio."""


class GenerationError(VandError, RuntimeError):
    """A synthetic task generator could not produce a valid dataset."""


class DivergenceError(VandError, FloatingPointError):
    """
    A non-finite value appeared during the forward pass or the update.

    Attributes:
        step: 0-based time step at which the value appeared, if known
        layer: 0-based layer index, if known
    """

    def __init__(self, message: str, step: Optional[int] = None, layer: Optional[int] = None):
        self.step = step
        self.layer = layer
        super().__init__(message)


class NonFiniteGradientError(DivergenceError):
    """A gradient handed to the optimizer contains NaN or Inf."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter '{name}'")


__all__ = [
    "VandError",
    "ShapeMismatchError",
    "ConfigError",
    "DatasetFormatError",
    "NoLearnableRegularizersError",
    "GenerationError",
    "DivergenceError",
    "NonFiniteGradientError",
]
