"""Multi-robot frontier navigation on a 2D grid world."""

__version__ = "0.1.0"
