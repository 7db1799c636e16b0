"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters: configuration problems exit 2, malformed input data exits 3,
and numerical failure during training exits 4.
"""


class SpanCleanError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SpanCleanError):
    """Invalid or inconsistent configuration (exit code 2)."""


class DataError(SpanCleanError):
    """Malformed input data; messages cite the offending line (exit code 3)."""


class NumericError(SpanCleanError):
    """Non-finite values encountered during training or scoring (exit code 4)."""
