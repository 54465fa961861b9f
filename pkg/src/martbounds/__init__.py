"""Exponential tail bounds for supermartingales, with a Monte Carlo harness."""

__version__ = "0.1.0"
