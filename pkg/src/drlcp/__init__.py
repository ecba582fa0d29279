"""Distributionally robust mixed-integer control with lifted policies."""

__version__ = "0.1.0"
