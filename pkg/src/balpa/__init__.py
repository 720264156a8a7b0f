"""Balanced primal-dual splitting for composite problems with linear constraints."""

__version__ = "0.1.0"
