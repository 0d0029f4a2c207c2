"""Report figures for pseudomode sweep artifacts."""

__version__ = "0.1.0"
