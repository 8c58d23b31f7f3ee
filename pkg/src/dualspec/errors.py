"""Exception types shared across the package.

The CLI maps each class onto a process exit code, so the hierarchy is kept
flat and small.
"""


class DualSpecError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class FormatError(DualSpecError):
    """A file or config document could not be parsed."""

    exit_code = 2


class ContractError(DualSpecError):
    """An operation was called with arguments that break its shape contract."""

    exit_code = 3


class ConfigError(ContractError):
    """A configuration value is inconsistent (e.g. channels not divisible by groups)."""


class NumericError(DualSpecError):
    """A computation produced a non-finite value."""

    exit_code = 4
