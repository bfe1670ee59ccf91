"""Temporal biased walks over snapshot networks for role-aware partner recommendation."""

__version__ = "0.1.0"
