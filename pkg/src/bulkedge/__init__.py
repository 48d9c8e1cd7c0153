"""Finite-volume bulk-edge correspondence experiments for disordered 2D lattices."""

__version__ = "0.1.0"
