"""Heterogeneous treatment effect estimation workbench."""

__version__ = "0.1.0"
