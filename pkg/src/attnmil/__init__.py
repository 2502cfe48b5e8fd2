"""Attention-based multiple-instance learning for bag-level classification."""

__version__ = "0.1.0"
