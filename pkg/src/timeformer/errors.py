"""Exception types shared across the package."""


class TimeFormerError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(TimeFormerError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ConfigurationError(TimeFormerError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(TimeFormerError, RuntimeError):
    """An API was called in a state that violates its preconditions."""


class NonFiniteError(TimeFormerError, FloatingPointError):
    """A tensor contains NaN or Inf where finite values are required."""


class ParseError(TimeFormerError, ValueError):
    """Input file could not be parsed."""


class TrainingError(TimeFormerError, RuntimeError):
    """Training diverged or produced a non-finite loss."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


class ReportError(TimeFormerError, RuntimeError):
    """A report could not be produced (for example, no evaluation windows)."""
