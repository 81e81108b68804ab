"""Homodyne tomography of heralded non-Gaussian states under bandwidth and sampling degradation."""

__version__ = "0.1.0"
