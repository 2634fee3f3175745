"""Temporal transaction-graph sampling, encoding and scam-account classification."""

__version__ = "0.1.0"
