"""Discrete measure-valued potentials in R^3: Birman-Schwinger matrices,
spectral scans, Stone-formula evolution, and Wiener-algebra parameters."""

__version__ = "0.1.0"
