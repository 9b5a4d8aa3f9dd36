"""Backflow spectroscopy of a driven color-center and phonon-mode model."""

__version__ = "0.1.0"
