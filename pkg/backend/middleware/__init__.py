"""Middleware package"""

from .logging import ExperimentLogContext
from .performance import timed

__all__ = ["ExperimentLogContext", "timed"]
