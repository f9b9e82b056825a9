"""Streaming category discovery with training-time pseudo-unknown creation."""

__version__ = "0.1.0"
