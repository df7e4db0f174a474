"""Training and sweep commands."""

from __future__ import annotations

import logging
from typing import List

import click

from vand_rnn import settings
from vand_rnn.core import trainer
from vand_rnn.data import dataset_dims, load_dataset
from vand_rnn.models import VandKind, load_config, save_model
from vand_rnn.utils.errors import ConfigError

from . import DivergedExit, cli, input_errors

logger = logging.getLogger(__name__)

_existing_file = click.Path(exists=True, dir_okay=False)


def parse_seeds(value: str) -> List[int]:
    """Seeds as ``a..b`` (inclusive) or a comma-separated list."""
    value = (value or "").strip()
    if not value:
        raise ConfigError("empty seed list")
    try:
        if ".." in value:
            low, high = (int(part) for part in value.split("..", 1))
            seeds = list(range(low, high + 1))
        else:
            seeds = [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid seed list '{value}'") from exc
    if not seeds:
        raise ConfigError(f"empty seed list '{value}'")
    if min(seeds) < 0:
        raise ConfigError("seeds must be non-negative")
    return seeds


def parse_modes(value: str) -> List[str]:
    names = [part.strip() for part in (value or "").split(",") if part.strip()]
    if not names:
        raise ConfigError(f"no modes given; valid modes: {', '.join(settings.ALL_MODES)}")
    return [VandKind.parse(name).value for name in names]


@cli.command("train")
@click.option("--config", "config_path", type=_existing_file, default=None, help="JSON config file.")
@click.option("--data", "data_path", type=_existing_file, required=True, help="Training trajectories.")
@click.option("--test", "test_path", type=_existing_file, default=None, help="Test trajectories.")
@click.option("--out-model", type=click.Path(dir_okay=False, writable=True), required=True)
@click.option("--out-metrics", type=click.Path(dir_okay=False, writable=True), default=None)
@click.option("--mode", default=None, help="Overrides the config mode.")
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option("--task", default=None, help="Task name recorded in the model and results.")
def train_command(config_path, data_path, test_path, out_model, out_metrics, mode, seed, epochs, task):
    """Train one model; exit 3 if training diverged."""
    with input_errors():
        config = load_config(config_path, mode=mode, seed=seed, epochs=epochs, task=task)
        train_set = load_dataset(data_path)
        test_set = load_dataset(test_path) if test_path else None
        model, result = trainer.train(config, train_set, test_set)

    save_model(model, out_model)
    if out_metrics:
        trainer.write_csv(trainer.metrics_table(result), out_metrics)
    if result.diverged:
        raise DivergedExit(f"training diverged after {result.steps} steps; partial model written to {out_model}")
    summary = f"trained {config.task}/{config.mode} seed={config.seed} steps={result.steps}"
    if result.mse_norm is not None:
        summary += f" mse_norm={result.mse_norm:.6g} mse_raw={result.mse_raw:.6g}"
    click.echo(summary)


@cli.command("sweep")
@click.option("--config", "config_path", type=_existing_file, default=None)
@click.option("--data", "data_path", type=_existing_file, required=True)
@click.option("--test", "test_path", type=_existing_file, required=True)
@click.option("--modes", default=",".join(settings.ALL_MODES), show_default=True)
@click.option("--seeds", default=f"{settings.DEFAULT_SEEDS[0]}..{settings.DEFAULT_SEEDS[-1]}",
              show_default=True, help="Inclusive range a..b or a comma list.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--model-dir", type=click.Path(file_okay=False, writable=True), default=None,
              help="Also write one model file per run here.")
@click.option("--task", default=None)
def sweep_command(config_path, data_path, test_path, modes, seeds, out, workers, model_dir, task):
    """Train every mode under every seed and tabulate test MSE."""
    try:
        mode_names = parse_modes(modes)
    except ConfigError as exc:
        raise click.BadParameter(str(exc), param_hint="--modes") from exc
    try:
        seed_list = parse_seeds(seeds)
    except ConfigError as exc:
        raise click.BadParameter(str(exc), param_hint="--seeds") from exc

    with input_errors():
        base = load_config(config_path, task=task)
        train_set = load_dataset(data_path)
        test_set = load_dataset(test_path)
        trainer.check_dims(dataset_dims(train_set), test_set, "test data")

    table = trainer.run_matrix(base, mode_names, seed_list, train_set, test_set, out, workers, model_dir)
    summary = trainer.summarize_results(table)
    click.echo(summary.to_string(index=False))
