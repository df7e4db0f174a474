"""Utility helpers."""

from . import errors, random_stream

__all__ = ["errors", "random_stream"]
