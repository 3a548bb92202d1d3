"""Noninterference checking for a small procedural language via pushdown systems."""

__version__ = "0.1.0"
