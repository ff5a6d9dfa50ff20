"""Harmonic dynamic linear models with spatially correlated levels."""

__version__ = "0.1.0"
