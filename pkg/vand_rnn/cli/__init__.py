"""Command registration for the vand command-line interface."""

import logging
from contextlib import contextmanager

import click

from vand_rnn import settings
from vand_rnn.utils.errors import DivergenceError, VandError


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
@click.option("-q", "--quiet", is_flag=True, help="Only warnings and errors.")
def cli(verbose: int, quiet: bool):
    """Train and compare recurrent models with learnable noise and dropout."""
    if quiet:
        level = logging.WARNING
    elif verbose >= 2:
        level = logging.DEBUG
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        handlers=[logging.StreamHandler()],
        force=True,
    )


class DivergedExit(click.ClickException):
    """Training diverged; the partial outputs were written."""

    exit_code = settings.EXIT_DIVERGED


@contextmanager
def input_errors():
    """Report bad inputs (shapes, formats, config) as usage errors."""
    try:
        yield
    except DivergenceError:
        raise
    except VandError as exc:
        raise click.UsageError(str(exc)) from exc


from . import data
from . import training
from . import analysis

__all__ = ["cli", "DivergedExit", "input_errors"]
