"""
Exception types raised by the laboratory.

Each subclasses the closest builtin so callers that already catch
ValueError / RuntimeError keep working.
"""


class RNNDAError(Exception):
    """Base class for all laboratory errors"""


class InvalidDimensionError(RNNDAError, ValueError):
    """State dimension not supported by an operator"""


class DivergenceError(RNNDAError, RuntimeError):
    """A trajectory produced non-finite values"""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class AlignmentError(RNNDAError, ValueError):
    """Time grids that must line up do not"""


class NotTrainedError(RNNDAError, RuntimeError):
    """Readout requested before training"""


class NumericalError(RNNDAError, RuntimeError):
    """Factorization or decomposition failed"""


class InitializationError(RNNDAError, RuntimeError):
    """Reservoir construction failed"""


class LayoutError(RNNDAError, ValueError):
    """Invalid patch decomposition"""


class SurrogateError(RNNDAError, RuntimeError):
    """Gaussian-process surrogate could not be fitted"""


class MacroTrainingError(RNNDAError, RuntimeError):
    """Macro-scale optimization produced no usable candidate"""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history


class CorrelationError(RNNDAError, ValueError):
    """Correlation undefined for a zero-variance component"""


class ConfigError(RNNDAError, ValueError):
    """Experiment configuration is inconsistent or unreadable"""
