"""Calibrated cost-sensitive losses and reduction algorithms for non-decomposable objectives."""

__version__ = "0.1.0"
