"""Similarity encoders (SimEc) and the spectral baselines used to validate them."""

__version__ = "0.1.0"
