"""Exception types shared across modules."""
from __future__ import annotations

__all__ = ["ConfigError", "ValidationError", "NumericGateError"]


class ConfigError(ValueError):
    """Invalid model configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ValidationError(RuntimeError):
    """A routing-rule assumption failed."""


class NumericGateError(RuntimeError):
    """A discretization gate failed (grid too coarse or solver failure)."""
