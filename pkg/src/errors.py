"""
Exception types for mTBI-BoW.

Every error carries the exit code the command-line layer reports.
"""


class BowError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ConfigError(BowError):
    """Invalid run configuration or command-line arguments."""

    exit_code = 2


class DataError(BowError, ValueError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 3


class NumericError(BowError, ArithmeticError):
    """A numerical routine failed (non-finite values, degenerate problem)."""

    exit_code = 4
