"""Evaluation, regularizer analysis and rollout commands."""

from __future__ import annotations

import click

from vand_rnn import settings
from vand_rnn.core import trainer
from vand_rnn.core.tasks import TaskKind, rollout
from vand_rnn.data import load_dataset
from vand_rnn.models import load_model

from . import cli, input_errors

_existing_file = click.Path(exists=True, dir_okay=False)


@cli.command("eval")
@click.option("--model", "model_path", type=_existing_file, required=True)
@click.option("--data", "data_path", type=_existing_file, required=True, help="Test trajectories.")
def eval_command(model_path, data_path):
    """Print the teacher-forced test MSE (normalized, raw)."""
    with input_errors():
        model = load_model(model_path)
        mse_norm, mse_raw = trainer.evaluate(model, load_dataset(data_path))
    click.echo(f"mse_norm={mse_norm:.10g} mse_raw={mse_raw:.10g}")


@cli.command("analyze")
@click.option("--model", "model_path", type=_existing_file, required=True)
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
def analyze_command(model_path, out):
    """Write the per-unit noise scale and dropout ratio of a trained model."""
    with input_errors():
        model = load_model(model_path)
        table = trainer.analyze_params(model, out)
    summary = table[table["unit"] == "summary"]
    for _, row in summary.iterrows():
        click.echo(
            f"layer {row['layer']}: sigma median={row['sigma']:.4g} iqr={row['sigma_iqr']:.4g}  "
            f"beta median={row['beta']:.4g} iqr={row['beta_iqr']:.4g}"
        )


@cli.command("rollout")
@click.option("--model", "model_path", type=_existing_file, required=True)
@click.option("--data", "data_path", type=_existing_file, required=True,
              help="Trajectory file supplying the start state.")
@click.option("--task", type=click.Choice([k.value for k in TaskKind]), default=None,
              help="Closed-loop dynamics (defaults to the model's task).")
@click.option("--index", type=click.IntRange(min=0), default=0, show_default=True,
              help="Which trajectory of the file to start from.")
@click.option("--horizon", type=click.IntRange(min=0), default=1200, show_default=True)
@click.option("--prefix", type=click.IntRange(min=1), default=1, show_default=True,
              help="Teacher-forced steps before closing the loop.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
def rollout_command(model_path, data_path, task, index, horizon, prefix, out):
    """Roll a model out in closed loop and write its states and predictions."""
    with input_errors():
        model = load_model(model_path)
        trajectories = load_dataset(data_path)
    task = task or model.task
    if task not in {k.value for k in TaskKind}:
        raise click.UsageError(f"cannot infer the task from model task '{model.task}'; pass --task")
    if index >= len(trajectories):
        raise click.BadParameter(f"file holds {len(trajectories)} trajectories", param_hint="--index")
    start = trajectories[index]
    if prefix > len(start):
        raise click.BadParameter(f"start trajectory has only {len(start)} steps", param_hint="--prefix")

    with input_errors():
        result = rollout(
            model, TaskKind(task), horizon, start, prefix=prefix,
            divergence_limit=settings.ROLLOUT_DIVERGENCE_LIMIT,
            range_factor=settings.ROLLOUT_RANGE_FACTOR,
        )
    trainer.write_csv(trainer.rollout_table(result), out)
    click.echo(
        f"rollout {len(result)}/{horizon} steps diverged={str(result.diverged).lower()} "
        f"within_range={str(result.within_range).lower()}"
    )
