"""Core domain modules."""

from . import compute, vand, head, optim, rnn, tasks, trainer

__all__ = ["compute", "vand", "head", "optim", "rnn", "tasks", "trainer"]
