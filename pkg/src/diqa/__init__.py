"""Diagnostic image quality classification for motion-corrupted MR-like images."""

__version__ = "0.1.0"
