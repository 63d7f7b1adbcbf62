"""Seedable simulation lab for IP traceback."""

__version__ = "0.1.0"
