"""rexl: joint relation and rationale classification with rule induction."""

__version__ = "0.1.0"
