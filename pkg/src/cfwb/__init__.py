"""Numpy autodiff, sparse attention, small sequence models and the experiments built on them."""

from .errors import ConfigError, DataError, FormatError, NumericalError, ShapeError, UsageError, WorkbenchError

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "FormatError", "NumericalError", "ShapeError", "UsageError", "WorkbenchError",
]
