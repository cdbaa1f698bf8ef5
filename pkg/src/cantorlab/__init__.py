"""Numerical experiments on the complement of the four-corners Cantor set."""

__version__ = "0.1.0"
