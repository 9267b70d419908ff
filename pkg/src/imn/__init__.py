"""Hypernetwork classifier with an exact per-input linear readout."""

__version__ = "0.1.0"
