"""Forced-oscillation source location by multivariate time-series classification."""

__version__ = "0.1.0"
