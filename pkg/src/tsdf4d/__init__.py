"""Spatio-temporal neural TSDF mapping of posed range-scan sequences."""

__version__ = "0.1.0"
