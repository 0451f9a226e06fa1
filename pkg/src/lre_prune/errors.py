"""Exception hierarchy shared across the package."""


class LREError(Exception):
    """Base class for all errors raised by lre_prune."""


class ShapeError(LREError, ValueError):
    pass


class SingularityError(LREError, ArithmeticError):
    """A Cholesky pivot was non-positive; raise the jitter and retry."""


class MutualRedundancyError(SingularityError):
    """Removed units predict each other circularly; shrink the removal set."""


class InsufficientSamplesError(LREError, ValueError):
    pass


class DivergenceError(LREError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TrainingError(DivergenceError):
    pass


class ModelFormatError(LREError, ValueError):
    pass


class UnsupportedVersionError(ModelFormatError):
    pass


class DataFormatError(LREError, ValueError):
    pass


class ConfigError(LREError, ValueError):
    pass


class UndefinedMetricError(LREError, ArithmeticError):
    pass
