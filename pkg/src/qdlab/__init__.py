"""Numerical laboratory for quadrature domains of hyperplane measures."""

__version__ = "0.1.0"
