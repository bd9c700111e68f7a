"""Ultra-short-term PV power forecasting with decomposition and uncertainty."""

__version__ = "0.1.0"

from .errors import NumericError, ValidationError

__all__ = ["NumericError", "ValidationError", "__version__"]
