"""Bimanual dexterous manipulation with relative, asymmetric policies."""

__version__ = "0.1.0"
