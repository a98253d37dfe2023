"""Sequence-aware co-methylation graph model for methylation age prediction."""

__version__ = "0.1.0"
