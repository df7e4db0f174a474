"""
Seeded random streams for reproducible training and sampling.

Every random draw in vand_rnn goes through a RandomStream: mask and noise
sampling, batch composition, start offsets and weight initialisation. A
stream is a torch.Generator seeded from a numpy SeedSequence, so child
streams obtained with ``split`` are statistically independent and the whole
tree of streams is determined by the root seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import torch

from vand_rnn.settings import DTYPE


@dataclass
class StreamDraw:
    """
    Record of a discrete draw, kept for logging and debugging.

    Attributes:
        values: The drawn integers
        low: Inclusive lower bound
        high: Inclusive upper bound
    """
    values: List[int]
    low: int
    high: int

    def __str__(self):
        return f"U{{{self.low}..{self.high}}}: {self.values}"


@dataclass
class RandomStream:
    """
    Splittable random stream backed by a torch.Generator.

    Attributes:
        seed_sequence: numpy SeedSequence this stream was derived from
        generator: torch.Generator used for all tensor draws
    """
    seed_sequence: np.random.SeedSequence
    generator: torch.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.generator = torch.Generator(device="cpu")
        self.generator.manual_seed(_seed_from(self.seed_sequence))

    @classmethod
    def from_seed(cls, seed: int) -> "RandomStream":
        """
        Create a root stream.

        Args:
            seed: Non-negative integer seed

        Returns:
            RandomStream: A fresh stream; equal seeds give equal draws

        Raises:
            ValueError: If the seed is negative
        """
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        return cls(np.random.SeedSequence(seed))

    def split(self, n: int) -> List["RandomStream"]:
        """Derive ``n`` independent child streams."""
        return [RandomStream(child) for child in self.seed_sequence.spawn(n)]

    def normal(self, shape: Sequence[int]) -> torch.Tensor:
        """Standard normal draws of the given shape."""
        return torch.randn(tuple(shape), generator=self.generator, dtype=DTYPE)

    def uniform(self, shape: Sequence[int], low: float = -1.0, high: float = 1.0) -> torch.Tensor:
        """Uniform draws in [low, high)."""
        u = torch.rand(tuple(shape), generator=self.generator, dtype=DTYPE)
        return low + (high - low) * u

    def bernoulli(self, probs: torch.Tensor) -> torch.Tensor:
        """Independent Bernoulli draws with the given success probabilities."""
        return torch.bernoulli(probs.detach().contiguous(), generator=self.generator)

    def permutation(self, n: int) -> List[int]:
        """A uniformly random ordering of range(n)."""
        return [int(i) for i in torch.randperm(n, generator=self.generator)]

    def randint(self, low: int, high: int, size: int) -> StreamDraw:
        """
        Draw integers uniformly from the inclusive range [low, high].

        Args:
            low: Smallest value
            high: Largest value
            size: Number of draws

        Returns:
            StreamDraw: The drawn values

        Raises:
            ValueError: If the range is empty
        """
        if high < low:
            raise ValueError(f"Empty range {low}..{high}")
        values = torch.randint(low, high + 1, (size,), generator=self.generator)
        return StreamDraw(values=[int(v) for v in values], low=low, high=high)


def _seed_from(seed_sequence: np.random.SeedSequence) -> int:
    words: Tuple[int, int] = tuple(int(w) for w in seed_sequence.generate_state(2, dtype=np.uint32))
    return (words[0] << 32) | words[1]


__all__ = ["RandomStream", "StreamDraw"]
