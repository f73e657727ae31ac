"""Synthetic RAW-domain data substrate: PTP, CFA, sensor noise, degradation and metrics."""

__version__ = "0.1.0"
