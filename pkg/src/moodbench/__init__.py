"""Mood inference from multi-modal smartphone sensing, across countries."""

__version__ = "0.1.0"
