"""Numerical laboratory for linear random walks on the torus."""

__version__ = "0.1.0"
