"""Constituency parsing over unsupervised speech segments."""

__version__ = "0.1.0"
