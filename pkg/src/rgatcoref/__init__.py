"""Relation graph attention over dependency graphs for three-way pronoun resolution."""

from .errors import RgatError, TrainingError, ValidationError
from .rgat import FinalAggregator, RgatConfig

__all__ = ["FinalAggregator", "RgatConfig", "RgatError", "TrainingError", "ValidationError"]
__version__ = "0.1.0"
