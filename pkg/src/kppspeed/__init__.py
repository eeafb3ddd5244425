"""Minimal KPP front speeds in random shear flows in two-dimensional channels."""

__version__ = "0.1.0"
