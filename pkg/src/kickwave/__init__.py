"""Kick-forced Burgers dynamics on the line."""

__version__ = "0.1.0"
