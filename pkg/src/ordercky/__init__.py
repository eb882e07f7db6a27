"""Constituency parsing toolkit with order-aware CKY decoding."""

__version__ = "0.1.0"
