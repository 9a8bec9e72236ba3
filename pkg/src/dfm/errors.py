"""Exception types shared across the package.

ConfigError signals bad user input (malformed config, invalid overrides,
incompatible shapes) and maps to CLI exit code 2. RuntimeAbort signals a
failure during an otherwise valid run (unreadable checkpoint, diverged
training, missing files) and maps to exit code 3.
"""


class DfmError(Exception):
    """Base class for package errors."""


class ConfigError(DfmError):
    """Invalid configuration or command-line input."""


class RuntimeAbort(DfmError):
    """Valid configuration, but the run cannot proceed."""
