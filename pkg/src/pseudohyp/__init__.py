"""Pseudo-hyperbolic geometry toolkit."""

__version__ = "0.1.0"
