"""Toolkit for image quality assessment with non-aligned references."""

__version__ = "0.1.0"
