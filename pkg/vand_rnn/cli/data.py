"""Dataset generation command."""

from __future__ import annotations

import click

from vand_rnn import settings
from vand_rnn.core.tasks import TaskKind, TaskSpec, generate
from vand_rnn.data import save_dataset
from vand_rnn.utils.errors import GenerationError

from . import cli


@cli.command("gen-data")
@click.option("--task", "task", type=click.Choice([k.value for k in TaskKind]), required=True)
@click.option("--n", "n_traj", type=click.IntRange(min=1), default=10, show_default=True,
              help="Number of trajectories.")
@click.option("--steps", type=click.IntRange(min=settings.MIN_TASK_STEPS), default=600, show_default=True,
              help="Steps per trajectory.")
@click.option("--seed", type=click.IntRange(min=0), envvar=settings.SEED_ENV_VAR, default=0, show_default=True)
@click.option("--noise", type=click.FloatRange(min=0.0), default=None,
              help="Observation noise std (task default if omitted).")
@click.option("--program-seed", type=click.IntRange(min=0), default=0, show_default=True,
              help="Waypoint program of the sequential task.")
@click.option("--out", type=click.Path(dir_okay=False, writable=True), required=True)
def gen_data(task, n_traj, steps, seed, noise, program_seed, out):
    """Generate a synthetic trajectory file."""
    spec = TaskSpec(
        kind=TaskKind(task), n_traj=n_traj, steps=steps, seed=seed,
        obs_noise=noise, program_seed=program_seed,
    )
    try:
        trajectories = generate(spec)
    except GenerationError as exc:
        raise click.UsageError(str(exc)) from exc
    save_dataset(trajectories, out)
    x_dim, y_dim = spec.dims
    click.echo(f"wrote {out}: n={len(trajectories)} T={steps} |X|={x_dim} |Y|={y_dim}")
