"""Exceptions raised throughout seer_forecast.

The command line maps configuration, data and checkpoint errors to exit
code 2. Everything else that escapes a command is a bug.

"""


class SeerError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(SeerError, ValueError):
    """Raised when array shapes are incompatible."""


class DivisibilityError(ShapeError):
    """Raised when strict patching gets a length not divisible by the patch."""


class DegenerateDistributionError(SeerError, ValueError):
    """Raised when a softmax slice holds only -inf entries."""


class ConfigError(SeerError, ValueError):
    """Raised for an invalid configuration value.

    Parameters
    ----------
    field : str
        Dotted name of the offending field, e.g. ``'moe.top_k'``.
    reason : str
        What is wrong with it.

    """

    def __init__(self, field, reason):
        self.field = field
        self.reason = reason
        super().__init__('{}: {}'.format(field, reason))


class NonFiniteError(SeerError, FloatingPointError):
    """Raised when NaN or inf values show up where they must not."""


class DataError(SeerError, ValueError):
    """Raised for unreadable or too short data."""


class CheckpointError(SeerError):
    """Raised for malformed checkpoints or mismatched horizons."""
