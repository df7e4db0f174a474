"""Command-line entry point for vand_rnn: ``python app.py <command>``."""

from vand_rnn.cli import cli

if __name__ == '__main__':
    cli(prog_name="vand")
