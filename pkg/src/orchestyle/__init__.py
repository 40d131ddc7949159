"""Melody-preserving, texture-controllable re-orchestration of symbolic music."""

from .errors import InputError, OrchestyleError
from .score import Grid, NoteEvent, QuantizedScore, Track

__all__ = ["Grid", "InputError", "NoteEvent", "OrchestyleError", "QuantizedScore", "Track"]
__version__ = "0.1.0"
