"""
Training, evaluation and the comparison matrix.

One epoch is ``steps_per_epoch`` batches (one by default): trajectories are
sampled, offset-augmented and normalized, the stacked model is unrolled over
the full sequence in the train phase, and the summed per-step Gaussian NLL is
backpropagated through time without truncation.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import torch

from vand_rnn import settings
from vand_rnn.core import compute
from vand_rnn.core.head import gaussian_nll, head_forward
from vand_rnn.core.optim import Adam
from vand_rnn.core.rnn import stacked_forward
from vand_rnn.core.tasks import RolloutResult, TaskKind, rollout
from vand_rnn.core.vand import transform_ratio, transform_scale
from vand_rnn.data import apply_norm, dataset_dims, denormalize_y, fit_norm, make_batches, normalize_x, normalize_y
from vand_rnn.models.experiment import ConditionResult, TrainConfig
from vand_rnn.models.network import StackedModel, load_model, model_filename, save_model
from vand_rnn.models.trajectory import Batch, Trajectory
from vand_rnn.settings import DTYPE
from vand_rnn.utils.errors import ConfigError, DivergenceError, NoLearnableRegularizersError
from vand_rnn.utils.random_stream import RandomStream

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["task", "mode", "seed", "mse_norm", "mse_raw", "diverged", "wall_s"]


def check_dims(model_or_config_dims: Tuple[int, int], dataset: Sequence[Trajectory], what: str = "data") -> None:
    dims = dataset_dims(dataset)
    if tuple(dims) != tuple(model_or_config_dims):
        raise ConfigError(
            f"{what} has |X|={dims[0]}, |Y|={dims[1]} but the model expects "
            f"|X|={model_or_config_dims[0]}, |Y|={model_or_config_dims[1]}"
        )


def build_model(config: TrainConfig, input_size: int, output_size: int, rng: RandomStream, norm=None) -> StackedModel:
    return StackedModel(
        input_size=input_size,
        output_size=output_size,
        hidden=config.hidden,
        layers=config.layers,
        mode=config.vand_mode,
        rng=rng,
        norm=norm,
        noise_in_recurrence=config.noise_in_recurrence,
        mask_cell_state=config.mask_cell_state,
        task=config.task,
    )


def sequence_loss(model: StackedModel, batch: Batch, rng: RandomStream) -> torch.Tensor:
    """Sum over time of the batch-mean Gaussian NLL, in the train phase."""
    outs, _ = stacked_forward(batch.x, model, model.mode, "train", rng)
    mu, var = head_forward(outs, model.head)
    return gaussian_nll(mu, var, batch.y)


def train(
    config: TrainConfig,
    train_set: Sequence[Trajectory],
    test_set: Optional[Sequence[Trajectory]] = None,
) -> Tuple[StackedModel, ConditionResult]:
    """
    Train one model under one condition.

    A non-finite loss, activation or gradient stops the run and is recorded
    as a divergence; the partially trained model is still returned.

    Raises:
        ConfigError: If train and test dimensions disagree
    """
    x_dim, y_dim = dataset_dims(train_set)
    if test_set:
        check_dims((x_dim, y_dim), test_set, "test data")

    started = time.perf_counter()
    init_rng, batch_rng, noise_rng = RandomStream.from_seed(config.seed).split(3)
    norm = fit_norm(train_set)
    normalized = [apply_norm(traj, norm) for traj in train_set]
    model = build_model(config, x_dim, y_dim, init_rng, norm)
    params = model.learnable_parameters()
    optimizer = Adam(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    result = ConditionResult(task=config.task, mode=config.mode, seed=config.seed)
    logger.info(
        "Training %s/%s seed=%d: %d learnable tensors, %d epochs",
        config.task, config.mode, config.seed, len(params), config.epochs,
    )

    try:
        for epoch in range(1, config.epochs + 1):
            losses = []
            for batch in make_batches(normalized, config.batch_size, batch_rng,
                                      config.steps_per_epoch, config.max_offset):
                loss = sequence_loss(model, batch, noise_rng)
                if not torch.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}")
                grads = compute.backward(loss, params)
                optimizer.step(grads)
                losses.append(float(loss))
            result.nll_curve.append(float(np.mean(losses)))

            if epoch % config.eval_every == 0 or epoch == config.epochs:
                entry: Dict[str, float] = {"epoch": epoch, "nll": result.nll_curve[-1]}
                if test_set:
                    entry["mse_norm"], entry["mse_raw"] = evaluate(model, test_set)
                result.eval_curve.append(entry)
                logger.info("epoch %d: nll=%.4f mse=%s", epoch, entry["nll"], entry.get("mse_norm"))
    except DivergenceError as exc:
        logger.warning("Run %s/%s seed=%d diverged: %s", config.task, config.mode, config.seed, exc)
        result.diverged = True

    result.steps = optimizer.steps
    if not result.diverged and result.eval_curve and "mse_norm" in result.eval_curve[-1]:
        result.mse_norm = result.eval_curve[-1]["mse_norm"]
        result.mse_raw = result.eval_curve[-1]["mse_raw"]
    result.wall_s = time.perf_counter() - started
    return model, result


def predict(model: StackedModel, trajectories: Sequence[Trajectory]) -> List[np.ndarray]:
    """Teacher-forced, inference-phase predicted means (normalized space), one array per trajectory."""
    predictions: List[Optional[np.ndarray]] = [None] * len(trajectories)
    by_length: Dict[int, List[int]] = {}
    for i, traj in enumerate(trajectories):
        by_length.setdefault(len(traj), []).append(i)
    with torch.no_grad():
        for indices in by_length.values():
            xs = np.stack([normalize_x(trajectories[i].x, model.norm) for i in indices], axis=1)
            outs, _ = stacked_forward(torch.as_tensor(xs, dtype=DTYPE), model, phase="infer")
            mu, _ = head_forward(outs, model.head)
            for column, i in enumerate(indices):
                predictions[i] = mu[:, column, :].numpy()
    return predictions


def evaluate(model: StackedModel, test_set: Sequence[Trajectory]) -> Tuple[float, float]:
    """
    Test MSE of the predicted mean, in normalized and in raw action units.

    Raises:
        ConfigError: If the data dimensions differ from the model's
    """
    check_dims((model.input_size, model.output_size), test_set, "test data")
    sq_norm = 0.0
    sq_raw = 0.0
    count = 0
    for traj, mu in zip(test_set, predict(model, test_set)):
        sq_norm += float(((mu - normalize_y(traj.y, model.norm)) ** 2).sum())
        sq_raw += float(((denormalize_y(mu, model.norm) - traj.y) ** 2).sum())
        count += traj.y.size
    return sq_norm / count, sq_raw / count


def _run_condition(job: Dict[str, Any]) -> Dict[str, Any]:
    config = TrainConfig.from_dict(job["config"])
    try:
        model, result = train(config, job["train_set"], job["test_set"])
        if job.get("model_dir"):
            save_model(model, Path(job["model_dir"]) / model_filename(config.task, config.mode, config.seed))
        return result.row()
    except Exception:
        logger.exception("Run %s/%s seed=%d failed", config.task, config.mode, config.seed)
        return ConditionResult(task=config.task, mode=config.mode, seed=config.seed, diverged=True).row()


def _init_worker():
    torch.set_num_threads(1)


def run_matrix(
    base_config: TrainConfig,
    modes: Sequence[str],
    seeds: Sequence[int],
    train_set: Sequence[Trajectory],
    test_set: Sequence[Trajectory],
    out_csv: Optional[os.PathLike] = None,
    workers: int = 1,
    model_dir: Optional[os.PathLike] = None,
) -> pd.DataFrame:
    """
    Train every (mode, seed) pair and tabulate the results.

    Rows come out mode-major in the given order regardless of ``workers``;
    a failing run is logged, recorded as diverged, and the matrix continues.
    """
    jobs = [
        {
            "config": replace(base_config, mode=mode, seed=seed).to_dict(),
            "train_set": train_set,
            "test_set": test_set,
            "model_dir": str(model_dir) if model_dir else None,
        }
        for mode in modes
        for seed in seeds
    ]
    logger.info("Running %d conditions x %d seeds (%d runs, %d workers)", len(modes), len(seeds), len(jobs), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
            rows = list(pool.map(_run_condition, jobs))
    else:
        rows = [_run_condition(job) for job in jobs]
    table = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    if out_csv is not None:
        write_csv(table, out_csv)
    return table


def summarize_results(table: pd.DataFrame) -> pd.DataFrame:
    """Per-mode median, quartiles, worst case and divergence count, sorted by median MSE."""
    rows = []
    for mode, group in table.groupby("mode", sort=False):
        finite = pd.to_numeric(group["mse_norm"], errors="coerce").dropna()
        diverged = group["diverged"].astype(str).str.lower().isin(["true", "1"])
        rows.append({
            "mode": mode,
            "runs": len(group),
            "diverged": int(diverged.sum()),
            "median": finite.median() if len(finite) else math.nan,
            "q1": finite.quantile(0.25) if len(finite) else math.nan,
            "q3": finite.quantile(0.75) if len(finite) else math.nan,
            "worst": finite.max() if len(finite) else math.nan,
        })
    summary = pd.DataFrame(rows, columns=["mode", "runs", "diverged", "median", "q1", "q3", "worst"])
    return summary.sort_values("median", na_position="last", kind="mergesort").reset_index(drop=True)


def best_runs(table: pd.DataFrame) -> pd.DataFrame:
    """The lowest-MSE seed of every mode (diverged runs excluded)."""
    scored = table.assign(mse_norm=pd.to_numeric(table["mse_norm"], errors="coerce")).dropna(subset=["mse_norm"])
    index = scored.groupby("mode", sort=False)["mse_norm"].idxmin()
    return scored.loc[index].reset_index(drop=True)


def analyze_params(model: StackedModel, out_csv: Optional[os.PathLike] = None) -> pd.DataFrame:
    """
    Per-unit noise scale and dropout ratio of every layer.

    One row per (layer, unit) with the transformed sigma and beta, then one
    summary row per layer holding the medians and interquartile ranges.

    Raises:
        NoLearnableRegularizersError: If the model's condition learns neither
    """
    kind = model.mode.kind
    if not (kind.learns_sigma or kind.learns_beta):
        raise NoLearnableRegularizersError(f"no learnable regularizers in mode '{kind.value}'")
    rows: List[Dict[str, Any]] = []
    summaries: List[Dict[str, Any]] = []
    with torch.no_grad():
        for layer, params in enumerate(model.regularizers):
            sigma = transform_scale(params.sigma_real).numpy()
            beta = transform_ratio(params.beta_real).numpy()
            for unit in range(len(sigma)):
                rows.append({"layer": layer, "unit": unit, "sigma": float(sigma[unit]), "beta": float(beta[unit])})
            summaries.append({
                "layer": layer,
                "unit": "summary",
                "sigma": float(np.median(sigma)),
                "beta": float(np.median(beta)),
                "sigma_iqr": float(np.subtract(*np.percentile(sigma, [75, 25]))),
                "beta_iqr": float(np.subtract(*np.percentile(beta, [75, 25]))),
            })
    table = pd.DataFrame(rows + summaries, columns=["layer", "unit", "sigma", "beta", "sigma_iqr", "beta_iqr"])
    if out_csv is not None:
        write_csv(table, out_csv)
    return table


def adaptation_table(model: StackedModel, tolerance: float = settings.ADAPTATION_TOLERANCE) -> pd.DataFrame:
    """
    Share of units per layer whose regularizers left their initial values.

    A unit has moved when |sigma - ln 2| or |beta - 0.5| exceeds ``tolerance``.
    Columns: layer, moved, units, fraction.

    Raises:
        NoLearnableRegularizersError: If the model's condition learns neither
    """
    units = analyze_params(model)
    units = units[units["unit"] != "summary"]
    moved = ((units["sigma"] - math.log(2)).abs() > tolerance) | ((units["beta"] - 0.5).abs() > tolerance)
    table = (
        units.assign(moved=moved)
        .groupby("layer", sort=True)["moved"]
        .agg(["sum", "count"])
        .reset_index()
        .rename(columns={"sum": "moved", "count": "units"})
    )
    table["moved"] = table["moved"].astype(int)
    table["fraction"] = table["moved"] / table["units"]
    return table


def compare_modes(table: pd.DataFrame, mode: str = "vand", baseline: str = "vanilla") -> Dict[str, Any]:
    """
    Median and worst-case test MSE of ``mode`` against ``baseline``.

    A diverged run makes the worst case infinite; a mode without any finite
    run has a NaN median, which never compares as better.

    Raises:
        ConfigError: If either mode has no runs in the table
    """
    summary = summarize_results(table).set_index("mode")
    missing = sorted({mode, baseline} - set(summary.index))
    if missing:
        raise ConfigError(f"results hold no runs of {', '.join(missing)}")

    def worst(name: str) -> float:
        row = summary.loc[name]
        return math.inf if row["diverged"] else float(row["worst"])

    median, baseline_median = float(summary.loc[mode, "median"]), float(summary.loc[baseline, "median"])
    worst_case, baseline_worst = worst(mode), worst(baseline)
    return {
        "mode": mode,
        "baseline": baseline,
        "median": median,
        "baseline_median": baseline_median,
        "worst": worst_case,
        "baseline_worst": baseline_worst,
        "median_better": median < baseline_median,
        "worst_better": worst_case < baseline_worst,
    }


def rollout_stability(
    model_dir: os.PathLike,
    task: str,
    mode: str,
    seeds: Sequence[int],
    start: Trajectory,
    horizon: int,
) -> pd.DataFrame:
    """
    Closed-loop rollout of every seed's saved model from the same start.

    A run is bounded when it neither diverged nor left the range bound. A
    seed without a model file (its run failed) counts as diverged.
    Columns: seed, steps, diverged, within_range, bounded.
    """
    rows = []
    for seed in seeds:
        path = Path(model_dir) / model_filename(task, mode, seed)
        if not path.exists():
            logger.warning("No model for %s/%s seed=%d; counted as diverged", task, mode, seed)
            rows.append({"seed": seed, "steps": 0, "diverged": True, "within_range": False, "bounded": False})
            continue
        result = rollout(
            load_model(path), TaskKind(task), horizon, start,
            divergence_limit=settings.ROLLOUT_DIVERGENCE_LIMIT,
            range_factor=settings.ROLLOUT_RANGE_FACTOR,
        )
        rows.append({
            "seed": seed,
            "steps": len(result),
            "diverged": result.diverged,
            "within_range": result.within_range,
            "bounded": not result.diverged and result.within_range,
        })
    return pd.DataFrame(rows, columns=["seed", "steps", "diverged", "within_range", "bounded"])


def metrics_table(result: ConditionResult) -> pd.DataFrame:
    """Training curve: NLL per epoch, test MSE at the evaluation cadence."""
    evaluations = {int(entry["epoch"]): entry for entry in result.eval_curve}
    rows = []
    for epoch, nll in enumerate(result.nll_curve, start=1):
        entry = evaluations.get(epoch, {})
        rows.append({"epoch": epoch, "nll": nll, "mse_norm": entry.get("mse_norm"), "mse_raw": entry.get("mse_raw")})
    return pd.DataFrame(rows, columns=["epoch", "nll", "mse_norm", "mse_raw"])


def rollout_table(result: RolloutResult) -> pd.DataFrame:
    """Rows (t, state_0.., pred_0..) of a closed-loop rollout, t starting at 1."""
    columns = ["t"]
    columns += [f"state_{i}" for i in range(result.states.shape[1])]
    columns += [f"pred_{i}" for i in range(result.predictions.shape[1])]
    if not len(result):
        return pd.DataFrame(columns=columns)
    t = np.arange(1, len(result) + 1)[:, None]
    return pd.DataFrame(np.hstack([t, result.states, result.predictions]), columns=columns).astype({"t": int})


def write_csv(table: pd.DataFrame, path: os.PathLike) -> Path:
    """Header row, comma separator, LF endings, booleans as true/false."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = table.copy()
    for column in out.columns:
        if out[column].dtype == bool:
            out[column] = out[column].map({True: "true", False: "false"})
    out.to_csv(path, index=False, lineterminator="\n")
    return path


__all__ = [
    "RESULT_COLUMNS",
    "check_dims",
    "build_model",
    "sequence_loss",
    "train",
    "predict",
    "evaluate",
    "run_matrix",
    "summarize_results",
    "best_runs",
    "analyze_params",
    "adaptation_table",
    "compare_modes",
    "rollout_stability",
    "metrics_table",
    "rollout_table",
    "write_csv",
]
