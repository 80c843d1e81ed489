"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage/config problems exit
with 1, bad input data with 2, and non-finite numerics with 3.
"""


class InjectBertError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(InjectBertError, ValueError):
    """Tensor shapes violate an operation's contract."""


class ConfigError(InjectBertError, ValueError):
    """A model or run configuration is inconsistent or incomplete."""


class DataError(InjectBertError, ValueError):
    """Input files or datasets are malformed."""


class CheckpointError(InjectBertError, ValueError):
    """A checkpoint manifest or blob failed validation."""


class NumericError(InjectBertError, ArithmeticError):
    """Training produced a non-finite value."""
