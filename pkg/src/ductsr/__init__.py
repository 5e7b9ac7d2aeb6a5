"""Duct-flow data, symbolic regression and constraint filtering of equations."""

__version__ = "0.1.0"
