"""Relightable neural implicit surfaces with shadow and highlight hints."""

__version__ = "0.1.0"
