"""Temporal community detection for multivariate price series."""

__version__ = "0.1.0"
