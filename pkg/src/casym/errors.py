"""Exception types shared across the toolkit, mapped to CLI exit codes."""


class ToolError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(ToolError):
    """Invalid configuration: unknown key, bad value, inconsistent settings."""

    exit_code = 2


class DataError(ToolError):
    """Bad input data: malformed files, shape mismatches, missing paths."""

    exit_code = 3


class DivergenceError(ToolError):
    """Training or inference produced non-finite values."""

    exit_code = 4
