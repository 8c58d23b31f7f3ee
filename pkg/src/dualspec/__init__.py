"""Snapshot spectral imaging: CASSI simulation, HDNet reconstruction, dual-domain training."""

__version__ = "0.1.0"
