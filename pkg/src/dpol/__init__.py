"""Differentially private online learning in the (near-)realizable regime."""

__version__ = "0.1.0"
