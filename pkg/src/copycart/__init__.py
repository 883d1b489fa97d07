"""Matched-pair estimation of purchasing mimicry in point-of-sale queue logs."""

__version__ = "0.1.0"
