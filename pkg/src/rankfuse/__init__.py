"""Joint 2D/3D classification toolkit built around rank-pooled dynamic feature images."""

from ._backend import BACKEND
from .errors import FormatError, InvalidInput, InvalidState, NumericalFailure

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FormatError",
    "InvalidInput",
    "InvalidState",
    "NumericalFailure",
]
