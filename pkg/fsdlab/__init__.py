"""Speculative-decoding laboratory: SD, FSD, rFSD and baselines over pluggable models."""

__version__ = "1.0.0"
