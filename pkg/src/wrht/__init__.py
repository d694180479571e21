"""Robust hypothesis testing with Wasserstein uncertainty sets."""

__version__ = "0.1.0"
