"""Neural question generation: sentence (and paragraph) to question with attention."""

__version__ = "0.1.0"
