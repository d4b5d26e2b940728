"""Offline exporters that produce vocada interchange files."""

__version__ = "0.1.0"
