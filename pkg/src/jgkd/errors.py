"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/config/schema/format
problems exit 1, numeric failures (non-finite values, divergence,
failed determinism) exit 2, and OS-level I/O errors exit 3.
"""


class JgkdError(Exception):
    """Base class for all package errors."""


class ValidationError(JgkdError):
    """Invalid argument, state, or configuration value."""


class ShapeError(ValidationError):
    """Tensor shapes violate an operation's contract."""


class SchemaError(ValidationError):
    """Label schema mismatch between data and model."""


class ConfigError(ValidationError):
    """Bad run configuration (unknown key, conflicting options)."""


class NumericError(JgkdError):
    """Non-finite value produced, or training diverged."""


class DeterminismError(NumericError):
    """A function required to be deterministic returned differing values."""


class FormatError(JgkdError):
    """Malformed or truncated file (checkpoint, corpus, annotations)."""
