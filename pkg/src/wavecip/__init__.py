"""Simultaneous reconstruction of two wave-equation coefficients from backscattered data."""

__version__ = "0.1.0"

from .exceptions import (CFLError, ConfigError, DataError, DiscretizationError,
                         GeometryError, InstabilityError, ShapeError, WavecipError)

__all__ = [
    "__version__", "WavecipError", "ConfigError", "GeometryError", "DiscretizationError",
    "ShapeError", "DataError", "CFLError", "InstabilityError",
]
