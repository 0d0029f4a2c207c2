"""Numerical pseudomode toolkit for degenerate evolution operators."""

__version__ = "0.1.0"
