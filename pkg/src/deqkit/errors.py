"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """An input vector or matrix does not match the expected dimensions."""


class DivergenceError(RuntimeError):
    """A solver produced a non-finite iterate.

    Carries the residual-norm trace accumulated up to the failure so
    callers can report partial progress.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = [] if trace is None else [float(t) for t in trace]


class OracleError(RuntimeError):
    """A finite-difference probe evaluated the function to a non-finite value."""


class ConfigError(ValueError):
    """A run configuration field failed validation.

    The offending field is named with its dotted path, e.g. ``strategy.k``.
    """

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DatasetFormatError(ValueError):
    """A dataset file is malformed; the message names the offending line."""


class BatchDivergedError(RuntimeError):
    """Every sample in a training batch diverged; no gradient exists."""


class TrainingAborted(RuntimeError):
    """A training run stopped early; carries the partial run record."""

    def __init__(self, message: str, record=None):
        super().__init__(message)
        self.record = record
