"""Exception types shared across the toolkit."""


class FlowGnnError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FlowGnnError, ValueError):
    """Tensor shapes do not conform for the requested operation."""


class GradientError(FlowGnnError, RuntimeError):
    """Misuse of the gradient tape (double backward, missing grads, ...)."""


class ConfigError(FlowGnnError, ValueError):
    """Invalid or contradictory configuration. CLI exit code 2."""


class DataError(FlowGnnError, ValueError):
    """Malformed or unreadable data files. CLI exit code 3."""


class NumericError(FlowGnnError, RuntimeError):
    """Numeric failure (NaN loss, diverged run). CLI exit code 4."""


class SimulationError(FlowGnnError, RuntimeError):
    """A simulation could not produce valid labels."""
