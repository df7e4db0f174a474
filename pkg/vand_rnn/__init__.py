"""Top-level package for VAND recurrent sequence learning."""

__all__ = ["core", "utils", "models", "data", "cli", "settings"]
