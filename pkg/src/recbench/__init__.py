"""Benchmarking workbench for neural item-item recommenders."""

__version__ = "0.1.0"
