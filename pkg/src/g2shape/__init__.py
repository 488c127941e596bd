"""Shaping the g2 autocorrelation and photon statistics of synthetic light."""

__version__ = "0.1.0"
