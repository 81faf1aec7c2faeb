"""Extremely-downsampled saliency network: inference graph, losses and evaluation."""
from . import kernels
from .errors import (ConfigError, DimensionError, DomainError, EdnError, FormatError,
                     MissingParameterError, UndefinedMetricError)

__version__ = "0.1.0"
