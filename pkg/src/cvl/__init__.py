"""Characteristic vector linkage (CVL) similarity, spillover signals, and backtesting."""

__version__ = "0.1.0"
