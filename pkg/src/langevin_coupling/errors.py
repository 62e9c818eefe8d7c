from __future__ import annotations

from typing import Any


class LandscapeError(Exception):
    """Base class. `exit_code` is what the CLI returns when this escapes a command."""

    exit_code = 3


class ConfigError(LandscapeError):
    exit_code = 1

    def __init__(self, message: str, *, key: str | None = None, line: int | None = None) -> None:
        self.key = key
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class InputError(LandscapeError, ValueError):
    exit_code = 2


class DivergenceError(LandscapeError):
    """A trajectory left the divergence radius or produced a non-finite value."""

    def __init__(self, message: str, *, last_iterate: Any = None, record: Any = None) -> None:
        super().__init__(message)
        self.last_iterate = last_iterate
        self.record = record


class DegenerateFitError(LandscapeError):
    pass


class NoExponentialTailError(LandscapeError):
    """No starting index gives a statistically exponential tail."""


class UnreachableError(LandscapeError):
    pass


class SweepError(LandscapeError):
    pass


class OracleMismatchError(LandscapeError):
    pass
