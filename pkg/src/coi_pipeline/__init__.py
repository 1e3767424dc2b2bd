"""Toolchain for building and evaluating chained-instruction datasets."""

__version__ = "0.1.0"
