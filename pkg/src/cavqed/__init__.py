"""Cavity-QED simulation toolkit for atoms in a high-cooperativity cavity."""

__version__ = "0.1.0"
