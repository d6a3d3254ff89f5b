"""Mean-field stochastic transport models and their diagnostics."""

from .errors import ConfigError, NumericalFailure

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericalFailure", "__version__"]
