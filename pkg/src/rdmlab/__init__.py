"""Numerical laboratory for the random displacement model."""

__version__ = "0.1.0"
