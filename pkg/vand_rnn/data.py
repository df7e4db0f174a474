"""Trajectory files, normalization, start-offset augmentation and batching."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
import torch

from vand_rnn import settings
from vand_rnn.models.trajectory import Batch, NormStats, Trajectory
from vand_rnn.utils.errors import DatasetFormatError, ShapeMismatchError
from vand_rnn.utils.random_stream import RandomStream

logger = logging.getLogger(__name__)


def save_dataset(dataset: Iterable[Trajectory], path: os.PathLike) -> Path:
    """Write one JSON object per line: {"id", "x", "y"}. Floats round-trip exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for traj in dataset:
            handle.write(json.dumps(traj.to_dict()) + "\n")
    return path


def load_dataset(path: os.PathLike) -> List[Trajectory]:
    """
    Read a trajectory file.

    Raises:
        DatasetFormatError: On a malformed record (with its line number),
            dimension changes across trajectories, or an empty file
    """
    trajectories: List[Trajectory] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                traj = Trajectory(
                    id=str(record["id"]),
                    x=np.asarray(record["x"], dtype=np.float64),
                    y=np.asarray(record["y"], dtype=np.float64),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"malformed trajectory record ({exc})", line=line_no) from exc
            if trajectories and (traj.x_dim, traj.y_dim) != (trajectories[0].x_dim, trajectories[0].y_dim):
                raise DatasetFormatError(
                    f"dimensions |X|={traj.x_dim}, |Y|={traj.y_dim} differ from "
                    f"|X|={trajectories[0].x_dim}, |Y|={trajectories[0].y_dim}",
                    line=line_no,
                )
            trajectories.append(traj)
    if not trajectories:
        raise DatasetFormatError("no trajectories")
    logger.debug("Loaded %d trajectories from %s", len(trajectories), path)
    return trajectories


def dataset_dims(dataset: Sequence[Trajectory]) -> tuple:
    return dataset[0].x_dim, dataset[0].y_dim


def fit_norm(dataset: Sequence[Trajectory]) -> NormStats:
    """Per-dimension mean and std over every (trajectory, step); std floored at 1e-8."""
    if not dataset:
        raise ValueError("cannot fit normalization on an empty dataset")
    xs = np.concatenate([traj.x for traj in dataset], axis=0)
    ys = np.concatenate([traj.y for traj in dataset], axis=0)
    return NormStats(
        x_mean=xs.mean(axis=0),
        x_std=np.maximum(xs.std(axis=0), settings.STD_FLOOR),
        y_mean=ys.mean(axis=0),
        y_std=np.maximum(ys.std(axis=0), settings.STD_FLOOR),
    )


def normalize_x(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return (x - stats.x_mean) / stats.x_std


def normalize_y(y: np.ndarray, stats: NormStats) -> np.ndarray:
    return (y - stats.y_mean) / stats.y_std


def denormalize_x(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * stats.x_std + stats.x_mean


def denormalize_y(y: np.ndarray, stats: NormStats) -> np.ndarray:
    return y * stats.y_std + stats.y_mean


def apply_norm(traj: Trajectory, stats: NormStats) -> Trajectory:
    return Trajectory(traj.id, normalize_x(traj.x, stats), normalize_y(traj.y, stats))


def invert_norm(traj: Trajectory, stats: NormStats) -> Trajectory:
    return Trajectory(traj.id, denormalize_x(traj.x, stats), denormalize_y(traj.y, stats))


def augment_offset(
    traj: Trajectory,
    rng: RandomStream,
    max_offset: int = settings.MAX_OFFSET,
    length: Optional[int] = None,
) -> Trajectory:
    """
    Random start offset with a fixed aligned length.

    Draws s uniformly from {1..max_offset} (1-based start) and returns the
    ``length`` steps starting there; ``length`` defaults to T - max_offset so
    every view of the same trajectory has the same length.

    Raises:
        ValueError: If the trajectory is shorter than max_offset + 2 steps
    """
    steps = len(traj)
    if steps < max_offset + 2:
        raise ValueError(f"trajectory {traj.id} has {steps} steps, needs at least {max_offset + 2}")
    if length is None:
        length = steps - max_offset
    if length > steps - max_offset:
        raise ValueError(f"aligned length {length} exceeds {steps - max_offset} for trajectory {traj.id}")
    if max_offset == 0:
        return traj.window(0, length)
    start = rng.randint(1, max_offset, 1).values[0]
    return traj.window(start - 1, length)


def stack_batch(views: Sequence[Trajectory]) -> Batch:
    """Stack equal-length trajectories time-major: (T, B, dim)."""
    lengths = {len(view) for view in views}
    if len(lengths) != 1:
        raise ShapeMismatchError(f"cannot stack trajectories of lengths {sorted(lengths)}")
    x = torch.from_numpy(np.ascontiguousarray(np.stack([v.x for v in views], axis=1)))
    y = torch.from_numpy(np.ascontiguousarray(np.stack([v.y for v in views], axis=1)))
    return Batch(x=x.to(settings.DTYPE), y=y.to(settings.DTYPE))


def make_batches(
    dataset: Sequence[Trajectory],
    batch_size: int,
    rng: RandomStream,
    n_batches: int = 1,
    max_offset: int = settings.MAX_OFFSET,
) -> List[Batch]:
    """
    Sample augmented training batches.

    Each batch draws ``batch_size`` trajectories (without replacement when
    batch_size <= N, with replacement otherwise) and offsets each
    independently. The aligned length is min(T) - max_offset.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if not dataset:
        raise ValueError("cannot batch an empty dataset")
    n = len(dataset)
    length = min(len(traj) for traj in dataset) - max_offset
    batches = []
    for _ in range(n_batches):
        if batch_size <= n:
            picks = rng.permutation(n)[:batch_size]
        else:
            picks = rng.randint(0, n - 1, batch_size).values
        views = [augment_offset(dataset[i], rng, max_offset, length) for i in picks]
        batches.append(stack_batch(views))
    return batches


__all__ = [
    "save_dataset",
    "load_dataset",
    "dataset_dims",
    "fit_norm",
    "normalize_x",
    "normalize_y",
    "denormalize_x",
    "denormalize_y",
    "apply_norm",
    "invert_norm",
    "augment_offset",
    "stack_batch",
    "make_batches",
]
