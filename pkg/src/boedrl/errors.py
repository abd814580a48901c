from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import Any


class BoedError(Exception):
    """Base class for every error raised by the library."""


class DimensionError(BoedError, ValueError):
    pass


class ContractError(BoedError, RuntimeError):
    pass


class NumericError(BoedError, ArithmeticError):
    def __init__(self, message: str, context: Mapping[str, Any] | None = None) -> None:
        self.context = dict(context or {})
        if self.context:
            details = ", ".join(f"{key}={value!r}" for key, value in self.context.items())
            message = f"{message} ({details})"
        super().__init__(message)


class UnsupportedCapabilityError(BoedError, NotImplementedError):
    pass


class ConfigError(BoedError, ValueError):
    def __init__(self, message: str, issues: Sequence[str] = ()) -> None:
        self.issues = list(issues)
        if self.issues:
            message = message + "\n" + "\n".join(f"  - {issue}" for issue in self.issues)
        super().__init__(message)


class CheckpointError(BoedError, ValueError):
    """Unreadable, truncated or incompatible checkpoint file."""
