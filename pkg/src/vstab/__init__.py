"""Numerical toolbox for V-stability of time-delay systems."""

__version__ = "0.1.0"
