"""Spatio-spectral attention WGAN for multi-spectral band synthesis."""

__version__ = "0.1.0"
