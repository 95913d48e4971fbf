"""Cooperation games among processors of a sharded blockchain."""

__version__ = "0.1.0"
