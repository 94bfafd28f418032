"""Numerical laboratory for Kronecker-correlated MIMO channels."""

__version__ = "0.1.0"
