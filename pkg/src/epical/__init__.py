"""Calibration toolkit for compartmental epidemic models."""
__version__ = "0.1.0"
