"""Controlled clinical text generation toolkit."""

__version__ = "0.1.0"
