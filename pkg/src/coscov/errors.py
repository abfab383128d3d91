"""Exception types shared across the package.

The CLI maps these onto its exit codes (config 1, data 2, numeric 3).
"""


class CosCovError(Exception):
    """Base class for all package errors."""


class ConfigError(CosCovError, ValueError):
    """Inconsistent shapes, bad hyperparameters, unknown config keys."""


class DataError(CosCovError, ValueError):
    """Unusable input data: bad labels, empty splits, too-short audio."""


class UnsupportedFormatError(DataError):
    """Audio file is valid RIFF but not 16-bit PCM."""


class ParseError(DataError):
    """Audio file is truncated or not RIFF/WAVE at all."""


class NumericError(CosCovError, FloatingPointError):
    """Non-finite values appeared in a forward pass or loss."""


class CheckpointError(CosCovError):
    """Checkpoint is corrupted or has an incompatible format version."""
