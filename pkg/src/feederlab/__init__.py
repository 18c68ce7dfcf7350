"""Pseudo-measurements of distribution-feeder active power from metadata,
weather and calendar features."""

__version__ = "0.1.0"
