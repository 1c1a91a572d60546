"""Exception types shared across the toolkit.

Plain ``ValueError`` is raised for argument-domain violations (bad timestep,
mismatched shapes, too-small images); the classes below mark failures that
callers may want to handle distinctly.
"""


class RestainError(Exception):
    """Base class for all toolkit-specific failures."""


class ConfigurationError(RestainError):
    """Invalid or inconsistent configuration (bad bounds, unknown keys, label/checkpoint mismatch)."""


class NumericError(RestainError):
    """Non-finite values encountered where finite math was required."""


class TrainingError(RestainError):
    """Training diverged or could not proceed."""


class OptimizationError(RestainError):
    """Prompt optimization produced a non-finite loss or otherwise failed."""


class AdapterError(RestainError):
    """A feature adapter produced invalid output or could not resolve its input."""


class CorpusError(RestainError):
    """A corpus manifest or a file it references is missing or malformed."""
