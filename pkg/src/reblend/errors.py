"""Exception taxonomy shared by the library and the command line tool.

Every failure the toolkit can produce maps onto a small set of exception
classes so that callers (and the CLI exit-code table) can react uniformly:

    ConfigError    -> exit 2   bad configuration, incompatible checkpoint
    DataError      -> exit 3   unreadable/invalid corpus, manifest, or adapter
    NumericError   -> exit 4   NaN/inf losses, undefined metrics
    PartialFailure -> exit 5   run finished but some inputs were skipped
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1


class ConfigError(ToolkitError):
    """Invalid configuration value, combination, or checkpoint mismatch."""

    exit_code = 2


class DataError(ToolkitError):
    """Corpus, manifest, annotation, or cache content is missing or invalid."""

    exit_code = 3


class SynthesisError(DataError):
    """A reconstruction adapter or synthesis stage could not run."""


class NumericError(ToolkitError):
    """A numeric invariant broke (non-finite loss, undefined metric)."""

    exit_code = 4


class MetricUndefinedError(NumericError):
    """A metric has no defined value for the given inputs (single-class AUC)."""


class PartialFailure(ToolkitError):
    """The run produced output but skipped some inputs; details attached."""

    exit_code = 5

    def __init__(self, message: str, failures: list[str] | None = None):
        super().__init__(message)
        self.failures = list(failures or [])
