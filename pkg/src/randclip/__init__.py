"""Randomized per-sample gradient clipping for DP-SGD: norm sketches, envelope CDFs, accounting."""

from .kernels import BACKEND
from .numerics import DomainError, SeededStream

__all__ = ["BACKEND", "DomainError", "SeededStream"]
__version__ = "0.1.0"
