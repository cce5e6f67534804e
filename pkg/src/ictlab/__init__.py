"""Improved consistency training on synthetic data with exact scores."""

__version__ = "0.1.0"
